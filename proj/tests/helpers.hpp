#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "dpq/audio_io.hpp"
#include "dpq/rng.hpp"

namespace dpq::test {

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("dpq_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

/// Voice-ish test signal: drifting harmonic stack with a syllable-rate
/// envelope plus a little breath noise, peak 0.35.
inline AudioBuffer synthetic_voice(size_t len, uint64_t seed) {
  SplitMix64 rng(seed);
  AudioBuffer buf;
  buf.samples.resize(len);
  const double f0_base = rng.uniform(100.0, 220.0);
  const double drift = rng.uniform(0.5, 2.0);
  const double env_rate = rng.uniform(2.0, 4.0);
  double phase1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double phase2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double lp = 0.0;
  for (size_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(i) / kSampleRateHz;
    const double f0 = f0_base * (1.0 + 0.05 * std::sin(2.0 * std::numbers::pi * drift * t));
    phase1 += 2.0 * std::numbers::pi * f0 / kSampleRateHz;
    phase2 += 2.0 * std::numbers::pi * 2.0 * f0 / kSampleRateHz;
    const double env = 0.55 + 0.45 * std::sin(2.0 * std::numbers::pi * env_rate * t);
    lp = 0.9 * lp + 0.1 * rng.uniform(-1.0, 1.0);
    buf.samples[i] =
        env * (0.7 * std::sin(phase1) + 0.25 * std::sin(phase2) + 0.3 * lp);
  }
  return peak_normalize(buf, 0.35);
}

/// Stationary colored Gaussian noise (one-pole lowpass of white noise),
/// peak-normalized.
inline AudioBuffer colored_noise(size_t len, uint64_t seed, double target_peak = 0.99) {
  SplitMix64 rng(seed);
  AudioBuffer buf;
  buf.samples.resize(len);
  double lp = 0.0;
  for (size_t i = 0; i < len; ++i) {
    lp = 0.85 * lp + 0.15 * rng.next_gaussian();
    buf.samples[i] = lp;
  }
  return peak_normalize(buf, target_peak);
}

}  // namespace dpq::test
