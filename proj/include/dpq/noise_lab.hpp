#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpq/audio_io.hpp"

namespace dpq {

/// One aligned clean/degraded segment with its provenance.
struct DegradedPair {
  std::vector<double> clean;
  std::vector<double> degraded;
  double snr_db = 0.0;
  std::string file_id;
  int segment_index = 0;
};

struct DegradedPairSet {
  std::vector<DegradedPair> pairs;
};

/// Phase-randomized noise carrying the corpus magnitude spectrum, full
/// inverse-transform length (corpus zero-padded to the next power of two),
/// before cropping and before peak normalization. Exposed so spectrum and
/// energy preservation can be checked on the untouched signal.
std::vector<double> make_ssn_full(const AudioBuffer& corpus, uint64_t seed);

/// Speech-shaped noise: phase randomization of the corpus spectrum (one
/// uniform [0, 2pi) draw per bin 1..N/2-1, ascending; bins 0 and N/2 keep
/// their magnitude at zero phase; upper half by conjugate symmetry), inverse
/// transform, crop to out_len, peak-normalize to 0.99.
AudioBuffer make_ssn(const AudioBuffer& corpus, size_t out_len, uint64_t seed);

/// clean + g*noise with g chosen so the measured SNR equals snr_db.
std::vector<double> mix_at_snr(const std::vector<double>& clean,
                               const std::vector<double>& noise, double snr_db);

/// Degrades a whole corpus: one SSN buffer from the concatenation of all
/// files, non-overlapping frame_len segments per file (hop == frame_len),
/// per-segment SNR drawn uniformly from snr_list in file-then-segment order,
/// contiguous noise slices regenerated with seed+1, seed+2, ... when
/// exhausted. Pure function of (inputs, seed).
DegradedPairSet degrade_corpus(
    const std::vector<std::pair<std::string, AudioBuffer>>& files,
    const std::vector<double>& snr_list_db, int frame_len, uint64_t seed);

}  // namespace dpq
