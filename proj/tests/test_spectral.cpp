#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dpq/spectral.hpp"
#include "dpq/rng.hpp"
#include "helpers.hpp"

using namespace dpq;

namespace {

std::vector<Complex> random_signal(size_t n, uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Complex> x(n);
  for (Complex& c : x) c = Complex(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
  return x;
}

double rel_diff(const Complex& a, const Complex& b, double scale) {
  return std::abs(a - b) / scale;
}

double signal_scale(const std::vector<Complex>& x) {
  double s = 0.0;
  for (const Complex& c : x) s = std::max(s, std::abs(c));
  return std::max(s, 1e-30);
}

}  // namespace

TEST_CASE("fft of an impulse is flat") {
  const auto spec = fft({Complex(1, 0), Complex(0, 0), Complex(0, 0), Complex(0, 0)});
  for (const Complex& bin : spec) {
    CHECK(std::abs(bin - Complex(1, 0)) <= 1e-15);
  }
}

TEST_CASE("fft rejects non-power-of-two lengths") {
  CHECK_THROWS_AS(fft(random_signal(12, 0)), Error);
}

TEST_CASE("ifft inverts fft") {
  const auto x = random_signal(1024, 3);
  const auto back = fft(fft(x), true);
  const double scale = signal_scale(x);
  for (size_t i = 0; i < x.size(); ++i) {
    CHECK(rel_diff(back[i], x[i], scale) <= 1e-10);
  }
}

TEST_CASE("Parseval holds across lengths 2^0 .. 2^16") {
  SplitMix64 rng(17);
  for (int k = 0; k <= 16; ++k) {
    const size_t n = size_t{1} << k;
    const auto x = random_signal(n, rng.next_u64());
    const auto spec = fft(x);
    double time_energy = 0.0, freq_energy = 0.0;
    for (const Complex& c : x) time_energy += std::norm(c);
    for (const Complex& c : spec) freq_energy += std::norm(c);
    freq_energy /= static_cast<double>(n);
    CHECK(std::fabs(time_energy - freq_energy) <= 1e-10 * time_energy);
  }
}

TEST_CASE("fft is linear") {
  SplitMix64 rng(29);
  const auto x = random_signal(256, rng.next_u64());
  const auto y = random_signal(256, rng.next_u64());
  const double a = rng.uniform(-2.0, 2.0);
  const double b = rng.uniform(-2.0, 2.0);

  std::vector<Complex> combo(256);
  for (size_t i = 0; i < 256; ++i) combo[i] = a * x[i] + b * y[i];

  const auto fx = fft(x);
  const auto fy = fft(y);
  const auto fc = fft(combo);
  double scale = 0.0;
  for (const Complex& c : fc) scale = std::max(scale, std::abs(c));
  for (size_t i = 0; i < 256; ++i) {
    CHECK(std::abs(fc[i] - (a * fx[i] + b * fy[i])) <= 1e-10 * scale);
  }
}

TEST_CASE("real input gives a Hermitian-symmetric spectrum") {
  SplitMix64 rng(31);
  std::vector<double> x(512);
  for (double& v : x) v = rng.uniform(-1.0, 1.0);
  const auto spec = fft_real(x);
  double scale = 0.0;
  for (const Complex& c : spec) scale = std::max(scale, std::abs(c));
  for (size_t k = 1; k < x.size(); ++k) {
    CHECK(std::abs(spec[k] - std::conj(spec[x.size() - k])) <= 1e-9 * scale);
  }
}

TEST_CASE("ltas of silence sits at the -120 dB floor") {
  AudioBuffer buf;
  buf.samples.assign(4096, 0.0);
  const BandSpectrum spec = ltas(buf);
  REQUIRE(spec.band_power_db.size() == 257);
  for (double db : spec.band_power_db) CHECK(db == kDbFloor);
}

TEST_CASE("ltas of a bin-centered tone concentrates there") {
  // With a Hann window a bin-centered tone leaks exactly into the two
  // adjacent bins at -6 dB, so dominance is asserted against every bin at
  // distance >= 2 instead of literally all others.
  AudioBuffer buf;
  const int frame_len = 512;
  const int bin = 32;
  const double freq = static_cast<double>(bin) / frame_len;
  buf.samples.resize(16384);
  for (size_t i = 0; i < buf.samples.size(); ++i) {
    buf.samples[i] = std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i));
  }
  const BandSpectrum spec = ltas(buf, frame_len, frame_len / 2);
  const double center = spec.band_power_db[bin];
  for (int k = 0; k < static_cast<int>(spec.band_power_db.size()); ++k) {
    if (std::abs(k - bin) <= 1) continue;
    CHECK(center - spec.band_power_db[k] > 40.0);
  }
}

TEST_CASE("ltas is sign-invariant") {
  AudioBuffer buf = test::synthetic_voice(8192, 5);
  AudioBuffer neg = buf;
  for (double& s : neg.samples) s = -s;
  const BandSpectrum a = ltas(buf);
  const BandSpectrum b = ltas(neg);
  REQUIRE(a.band_power_db.size() == b.band_power_db.size());
  for (size_t k = 0; k < a.band_power_db.size(); ++k) {
    CHECK(a.band_power_db[k] == b.band_power_db[k]);
  }
}

TEST_CASE("ltas rejects too-short input") {
  AudioBuffer buf;
  buf.samples.assign(100, 0.1);
  CHECK_THROWS_AS(ltas(buf, 512, 256), Error);
}
