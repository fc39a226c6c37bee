#include "dpq/spectral.hpp"

#include <cmath>
#include <numbers>

namespace dpq {

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

namespace {

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace

void fft_inplace(std::vector<Complex>& data, bool inverse) {
  const size_t n = data.size();
  if (!is_pow2(n)) {
    throw Error(ErrorKind::NonPowerOfTwoLength,
                "fft length " + std::to_string(n));
  }
  if (n == 1) return;

  // Bit-reversal permutation.
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }

  // Root table computed directly from polar form; accumulating the twiddle
  // by repeated multiplication drifts too far for the 1e-10 Parseval bound.
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<Complex> roots(n / 2);
  for (size_t k = 0; k < n / 2; ++k) {
    const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k) /
                         static_cast<double>(n);
    roots[k] = Complex(std::cos(angle), std::sin(angle));
  }

  for (size_t len = 2; len <= n; len <<= 1) {
    const size_t stride = n / len;
    for (size_t start = 0; start < n; start += len) {
      for (size_t k = 0; k < len / 2; ++k) {
        const Complex w = roots[k * stride];
        Complex& a = data[start + k];
        Complex& b = data[start + k + len / 2];
        const Complex t = w * b;
        b = a - t;
        a += t;
      }
    }
  }

  if (inverse) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Complex& c : data) c *= inv_n;
  }
}

std::vector<Complex> fft(const std::vector<Complex>& signal, bool inverse) {
  std::vector<Complex> out = signal;
  fft_inplace(out, inverse);
  return out;
}

std::vector<Complex> fft_real(const std::vector<double>& signal) {
  std::vector<Complex> out(signal.size());
  for (size_t i = 0; i < signal.size(); ++i) out[i] = Complex(signal[i], 0.0);
  fft_inplace(out, false);
  return out;
}

BandSpectrum ltas(const AudioBuffer& buf, int frame_len, int hop) {
  if (!is_pow2(static_cast<size_t>(frame_len))) {
    throw Error(ErrorKind::NonPowerOfTwoLength,
                "ltas frame_len " + std::to_string(frame_len));
  }
  if (static_cast<long>(buf.samples.size()) < frame_len) {
    throw Error(ErrorKind::InputTooShort,
                "ltas needs at least " + std::to_string(frame_len) + " samples, got " +
                    std::to_string(buf.samples.size()));
  }

  // Periodic Hann window.
  std::vector<double> window(frame_len);
  for (int i = 0; i < frame_len; ++i) {
    window[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / frame_len));
  }

  const int bins = frame_len / 2 + 1;
  std::vector<double> power(bins, 0.0);
  const long n = static_cast<long>(buf.samples.size());
  long frame_count = 0;
  std::vector<Complex> work(frame_len);
  for (long start = 0; start + frame_len <= n; start += hop) {
    for (int i = 0; i < frame_len; ++i) {
      work[i] = Complex(buf.samples[start + i] * window[i], 0.0);
    }
    fft_inplace(work, false);
    for (int k = 0; k < bins; ++k) power[k] += std::norm(work[k]);
    ++frame_count;
  }

  BandSpectrum out;
  out.frame_len = frame_len;
  out.hop = hop;
  out.band_power_db.resize(bins);
  for (int k = 0; k < bins; ++k) {
    const double mean_power = power[k] / static_cast<double>(frame_count);
    out.band_power_db[k] =
        mean_power > 0.0 ? std::max(kDbFloor, 10.0 * std::log10(mean_power)) : kDbFloor;
  }
  return out;
}

}  // namespace dpq
