#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpq/error.hpp"

namespace dpq {

inline constexpr int kSampleRateHz = 16000;

/// Mono waveform, samples in [-1, 1]. The raw-signal currency of the library.
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate_hz = kSampleRateHz;
};

/// Reads a RIFF/WAVE file. Accepts PCM 16-bit, 1 channel, 16000 Hz only;
/// anything else is UnsupportedFormat naming the offending field.
/// Integer samples are scaled by 1/32768.
AudioBuffer read_wav(const std::string& path);

/// Writes a canonical 44-byte-header PCM16 mono WAV. Samples are quantized
/// with round-half-away-from-zero at scale 32768 and clamped to
/// [-32768, 32767], which keeps the write->read roundtrip error within
/// 1/32768 per sample.
void write_wav(const std::string& path, const AudioBuffer& buf);

/// Cuts frames of frame_len starting every hop samples. The tail remainder
/// is dropped; input shorter than frame_len yields no frames.
std::vector<std::vector<double>> segment_frames(const AudioBuffer& buf,
                                                int frame_len, int hop);

/// Scales so that max |sample| == target_peak. SilentInput on all-zero input.
AudioBuffer peak_normalize(const AudioBuffer& buf, double target_peak);

}  // namespace dpq
