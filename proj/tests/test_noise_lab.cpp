#include <doctest.h>

#include <cmath>

#include "dpq/noise_lab.hpp"
#include "dpq/spectral.hpp"
#include "dpq/rng.hpp"
#include "helpers.hpp"

using namespace dpq;

namespace {

double energy(const std::vector<double>& x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc;
}

double measured_snr_db(const std::vector<double>& clean,
                       const std::vector<double>& degraded) {
  std::vector<double> noise(clean.size());
  for (size_t i = 0; i < clean.size(); ++i) noise[i] = degraded[i] - clean[i];
  return 10.0 * std::log10(energy(clean) / energy(noise));
}

}  // namespace

TEST_CASE("make_ssn preserves the magnitude spectrum bin by bin") {
  const AudioBuffer corpus = test::synthetic_voice(10000, 21);
  const std::vector<double> full = make_ssn_full(corpus, 99);

  std::vector<double> padded = corpus.samples;
  padded.resize(next_pow2(padded.size()), 0.0);
  const auto corpus_spec = fft_real(padded);
  const auto noise_spec = fft_real(full);
  REQUIRE(corpus_spec.size() == noise_spec.size());

  double peak = 0.0;
  for (const Complex& c : corpus_spec) peak = std::max(peak, std::abs(c));
  for (size_t k = 0; k < corpus_spec.size(); ++k) {
    const double want = std::abs(corpus_spec[k]);
    const double got = std::abs(noise_spec[k]);
    CHECK(std::fabs(got - want) <= 1e-6 * std::max(want, 1e-9 * peak));
  }
}

TEST_CASE("make_ssn preserves total energy before cropping") {
  const AudioBuffer corpus = test::synthetic_voice(12000, 22);
  const std::vector<double> full = make_ssn_full(corpus, 5);
  const double corpus_energy = energy(corpus.samples);
  CHECK(std::fabs(energy(full) - corpus_energy) <= 1e-9 * corpus_energy);
}

TEST_CASE("different seeds differ in waveform but not in spectrum") {
  const AudioBuffer corpus = test::synthetic_voice(8000, 23);
  const std::vector<double> a = make_ssn_full(corpus, 1);
  const std::vector<double> b = make_ssn_full(corpus, 2);

  double max_diff = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    max_diff = std::max(max_diff, std::fabs(a[i] - b[i]));
  }
  CHECK(max_diff > 1e-3);

  const auto sa = fft_real(a);
  const auto sb = fft_real(b);
  double peak = 0.0;
  for (const Complex& c : sa) peak = std::max(peak, std::abs(c));
  for (size_t k = 0; k < sa.size(); ++k) {
    CHECK(std::fabs(std::abs(sa[k]) - std::abs(sb[k])) <=
          1e-6 * std::max(std::abs(sa[k]), 1e-9 * peak));
  }
}

TEST_CASE("make_ssn output is cropped and normalized to 0.99") {
  const AudioBuffer corpus = test::synthetic_voice(9000, 24);
  const AudioBuffer noise = make_ssn(corpus, 4096, 7);
  REQUIRE(noise.samples.size() == 4096);
  double peak = 0.0;
  for (double s : noise.samples) peak = std::max(peak, std::fabs(s));
  CHECK(peak == doctest::Approx(0.99).epsilon(1e-12));
}

TEST_CASE("make_ssn rejects over-long requests and tiny corpora") {
  const AudioBuffer corpus = test::synthetic_voice(4096, 25);
  CHECK_THROWS_AS(make_ssn(corpus, 8192, 1), Error);
  AudioBuffer tiny;
  tiny.samples = {0.1};
  CHECK_THROWS_AS(make_ssn_full(tiny, 1), Error);
}

TEST_CASE("mix_at_snr") {
  SUBCASE("equal powers at 0 dB means unit gain") {
    const std::vector<double> clean{0.5, -0.5, 0.5, -0.5};
    const std::vector<double> noise{-0.5, 0.5, 0.5, -0.5};
    const auto mixed = mix_at_snr(clean, noise, 0.0);
    for (size_t i = 0; i < clean.size(); ++i) {
      CHECK(mixed[i] == doctest::Approx(clean[i] + noise[i]).epsilon(1e-12));
    }
  }

  SUBCASE("20 dB scales noise power to a hundredth of clean power") {
    SplitMix64 rng(31);
    std::vector<double> clean(256), noise(256);
    for (double& v : clean) v = rng.uniform(-0.5, 0.5);
    for (double& v : noise) v = rng.uniform(-0.5, 0.5);
    const auto mixed = mix_at_snr(clean, noise, 20.0);
    std::vector<double> scaled(256);
    for (size_t i = 0; i < 256; ++i) scaled[i] = mixed[i] - clean[i];
    const double p_clean = energy(clean) / 256.0;
    const double p_scaled = energy(scaled) / 256.0;
    CHECK(std::fabs(p_scaled - p_clean / 100.0) <= 1e-6 * p_clean / 100.0);
  }

  SUBCASE("silent clean is rejected") {
    const std::vector<double> clean(8, 0.0);
    const std::vector<double> noise(8, 0.1);
    CHECK_THROWS_AS(mix_at_snr(clean, noise, 0.0), Error);
  }

  SUBCASE("measured SNR tracks the request within 0.01 dB") {
    SplitMix64 rng(37);
    for (int trial = 0; trial < 50; ++trial) {
      const size_t n = 64 + rng.index(512);
      std::vector<double> clean(n), noise(n);
      for (double& v : clean) v = rng.uniform(-0.5, 0.5);
      for (double& v : noise) v = rng.uniform(-0.5, 0.5);
      const double snr = rng.uniform(-10.0, 30.0);
      const auto mixed = mix_at_snr(clean, noise, snr);
      CHECK(std::fabs(measured_snr_db(clean, mixed) - snr) < 0.01);
    }
  }
}

TEST_CASE("degrade_corpus") {
  SUBCASE("one file, one frame, one snr") {
    const AudioBuffer file = test::synthetic_voice(4095, 41);
    const DegradedPairSet set = degrade_corpus({{"f0", file}}, {5.0}, 4095, 3);
    REQUIRE(set.pairs.size() == 1);
    CHECK(set.pairs[0].snr_db == 5.0);
    CHECK(set.pairs[0].file_id == "f0");
    CHECK(set.pairs[0].segment_index == 0);
    CHECK(set.pairs[0].clean.size() == 4095);
    CHECK(set.pairs[0].degraded.size() == 4095);
    CHECK(std::fabs(measured_snr_db(set.pairs[0].clean, set.pairs[0].degraded) - 5.0) <
          0.01);
  }

  SUBCASE("same seed twice is bit-identical") {
    std::vector<std::pair<std::string, AudioBuffer>> files{
        {"a", test::synthetic_voice(3000, 42)},
        {"b", test::synthetic_voice(2600, 43)},
    };
    const DegradedPairSet s1 = degrade_corpus(files, {0.0, 10.0}, 512, 77);
    const DegradedPairSet s2 = degrade_corpus(files, {0.0, 10.0}, 512, 77);
    REQUIRE(s1.pairs.size() == s2.pairs.size());
    for (size_t i = 0; i < s1.pairs.size(); ++i) {
      CHECK(s1.pairs[i].snr_db == s2.pairs[i].snr_db);
      CHECK(s1.pairs[i].clean == s2.pairs[i].clean);
      CHECK(s1.pairs[i].degraded == s2.pairs[i].degraded);
    }
  }

  SUBCASE("segment indices are strictly increasing per file") {
    std::vector<std::pair<std::string, AudioBuffer>> files{
        {"a", test::synthetic_voice(2048, 44)},
    };
    const DegradedPairSet set = degrade_corpus(files, {5.0}, 256, 1);
    REQUIRE(set.pairs.size() == 8);
    for (size_t i = 0; i < set.pairs.size(); ++i) {
      CHECK(set.pairs[i].segment_index == static_cast<int>(i));
    }
  }

  SUBCASE("empty snr list is a config error") {
    const AudioBuffer file = test::synthetic_voice(1024, 45);
    try {
      degrade_corpus({{"a", file}}, {}, 256, 1);
      FAIL("expected ConfigInvalid");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ConfigInvalid);
    }
  }

  SUBCASE("no files is an empty corpus") {
    CHECK_THROWS_AS(degrade_corpus({}, {5.0}, 256, 1), Error);
  }

  SUBCASE("noise slices regenerate when the buffer is exhausted") {
    // 12 segments of 512 need 6144 noise samples from a 4000-sample corpus,
    // forcing at least one regeneration.
    std::vector<std::pair<std::string, AudioBuffer>> files{
        {"a", test::synthetic_voice(4000, 46)},
        {"b", test::synthetic_voice(2200, 47)},
    };
    const DegradedPairSet set = degrade_corpus(files, {5.0}, 512, 9);
    CHECK(set.pairs.size() == 11);
    for (const DegradedPair& p : set.pairs) {
      CHECK(std::fabs(measured_snr_db(p.clean, p.degraded) - 5.0) < 0.01);
    }
  }
}

TEST_CASE("ssn long-term spectrum tracks the corpus on active bins") {
  // Colored-noise corpus: the crest factor matches the phase-randomized
  // output, so the absolute LTAS comparison is meaningful after the 0.99
  // peak normalization on both sides.
  const size_t corpus_len = 1 << 18;
  const AudioBuffer corpus = test::colored_noise(corpus_len, 55, 0.99);
  const AudioBuffer noise = make_ssn(corpus, 160000, 5);

  const BandSpectrum corpus_ltas = ltas(corpus);
  const BandSpectrum noise_ltas = ltas(noise);

  double peak_db = kDbFloor;
  for (double db : corpus_ltas.band_power_db) peak_db = std::max(peak_db, db);

  int active = 0;
  for (size_t k = 0; k < corpus_ltas.band_power_db.size(); ++k) {
    if (corpus_ltas.band_power_db[k] < peak_db - 40.0) continue;
    ++active;
    CHECK(std::fabs(noise_ltas.band_power_db[k] - corpus_ltas.band_power_db[k]) <= 3.0);
  }
  CHECK(active > 10);
}
