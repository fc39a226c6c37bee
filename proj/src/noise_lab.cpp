#include "dpq/noise_lab.hpp"

#include <cmath>
#include <numbers>

#include "dpq/rng.hpp"
#include "dpq/spectral.hpp"

namespace dpq {

namespace {

double mean_power(const std::vector<double>& x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

// Keeps the SNR draws decorrelated from the phase draws that use the raw
// seed. The increment is the SplitMix64 stream constant.
constexpr uint64_t kSnrStreamOffset = 0x9E3779B97F4A7C15ULL;

}  // namespace

std::vector<double> make_ssn_full(const AudioBuffer& corpus, uint64_t seed) {
  const size_t n_in = corpus.samples.size();
  if (n_in < 2) {
    throw Error(ErrorKind::InputTooShort, "make_ssn needs a corpus of at least 2 samples");
  }
  const size_t n = next_pow2(n_in);

  std::vector<Complex> spectrum(n, Complex(0.0, 0.0));
  for (size_t i = 0; i < n_in; ++i) spectrum[i] = Complex(corpus.samples[i], 0.0);
  fft_inplace(spectrum, false);

  SplitMix64 rng(seed);
  spectrum[0] = Complex(std::abs(spectrum[0]), 0.0);
  spectrum[n / 2] = Complex(std::abs(spectrum[n / 2]), 0.0);
  for (size_t k = 1; k < n / 2; ++k) {
    const double mag = std::abs(spectrum[k]);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    spectrum[k] = Complex(mag * std::cos(phase), mag * std::sin(phase));
    spectrum[n - k] = std::conj(spectrum[k]);
  }

  fft_inplace(spectrum, true);

  double sum_sq = 0.0;
  double max_imag = 0.0;
  for (const Complex& c : spectrum) {
    sum_sq += c.real() * c.real();
    max_imag = std::max(max_imag, std::fabs(c.imag()));
  }
  const double rms = std::sqrt(sum_sq / static_cast<double>(n));
  if (max_imag >= 1e-9 * rms) {
    throw Error(ErrorKind::NumericalFailure,
                "imaginary residue " + std::to_string(max_imag) + " vs rms " +
                    std::to_string(rms));
  }

  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = spectrum[i].real();
  return out;
}

AudioBuffer make_ssn(const AudioBuffer& corpus, size_t out_len, uint64_t seed) {
  if (out_len > corpus.samples.size()) {
    throw Error(ErrorKind::InputTooShort,
                "requested " + std::to_string(out_len) + " noise samples from a " +
                    std::to_string(corpus.samples.size()) + "-sample corpus");
  }
  std::vector<double> full = make_ssn_full(corpus, seed);
  AudioBuffer noise;
  noise.samples.assign(full.begin(), full.begin() + static_cast<long>(out_len));
  return peak_normalize(noise, 0.99);
}

std::vector<double> mix_at_snr(const std::vector<double>& clean,
                               const std::vector<double>& noise, double snr_db) {
  if (clean.size() != noise.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "mix_at_snr lengths " + std::to_string(clean.size()) + " vs " +
                    std::to_string(noise.size()));
  }
  const double p_clean = mean_power(clean);
  const double p_noise = mean_power(noise);
  if (p_clean <= 0.0) throw Error(ErrorKind::ZeroPowerInput, "clean frame is silent");
  if (p_noise <= 0.0) throw Error(ErrorKind::ZeroPowerInput, "noise frame is silent");

  const double g = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
  std::vector<double> out(clean.size());
  for (size_t i = 0; i < clean.size(); ++i) out[i] = clean[i] + g * noise[i];
  return out;
}

DegradedPairSet degrade_corpus(
    const std::vector<std::pair<std::string, AudioBuffer>>& files,
    const std::vector<double>& snr_list_db, int frame_len, uint64_t seed) {
  if (files.empty()) {
    throw Error(ErrorKind::EmptyCorpus, "degrade_corpus got no files");
  }
  if (snr_list_db.empty()) {
    throw Error(ErrorKind::ConfigInvalid, "snr list is empty");
  }
  if (frame_len < 1) {
    throw Error(ErrorKind::ConfigInvalid, "frame_len must be >= 1");
  }

  AudioBuffer concat;
  for (const auto& [id, buf] : files) {
    concat.samples.insert(concat.samples.end(), buf.samples.begin(), buf.samples.end());
  }
  if (concat.samples.size() < 2) {
    throw Error(ErrorKind::EmptyCorpus, "corpus holds fewer than 2 samples");
  }

  AudioBuffer noise = make_ssn(concat, concat.samples.size(), seed);
  size_t noise_pos = 0;
  uint64_t noise_seed = seed;

  SplitMix64 snr_rng(seed + kSnrStreamOffset);

  DegradedPairSet set;
  for (const auto& [id, buf] : files) {
    const auto frames = segment_frames(buf, frame_len, frame_len);
    for (size_t si = 0; si < frames.size(); ++si) {
      if (noise_pos + static_cast<size_t>(frame_len) > noise.samples.size()) {
        noise = make_ssn(concat, concat.samples.size(), ++noise_seed);
        noise_pos = 0;
      }
      std::vector<double> slice(noise.samples.begin() + static_cast<long>(noise_pos),
                                noise.samples.begin() +
                                    static_cast<long>(noise_pos + frame_len));
      noise_pos += static_cast<size_t>(frame_len);

      const double snr = snr_list_db[snr_rng.index(snr_list_db.size())];
      DegradedPair pair;
      pair.clean = frames[si];
      pair.degraded = mix_at_snr(pair.clean, slice, snr);
      pair.snr_db = snr;
      pair.file_id = id;
      pair.segment_index = static_cast<int>(si);
      set.pairs.push_back(std::move(pair));
    }
  }
  return set;
}

}  // namespace dpq
