#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dpq/noise_lab.hpp"
#include "dpq/pesqnet.hpp"

namespace dpq {

/// One line of a JSONL label file. Keys on disk are exactly
/// clean, degraded, speaker, segment_index, score.
struct LabelRecord {
  std::string clean;
  std::string degraded;
  std::string speaker;
  int segment_index = 0;
  double score = 0.0;
};

std::vector<LabelRecord> load_labels(const std::string& path);
void save_labels(const std::string& path, const std::vector<LabelRecord>& records);

inline constexpr double kScoreMin = -0.5;
inline constexpr double kScoreMax = 4.5;

/// Stand-in label source: maps the segment SNR through a logistic curve into
/// [1.0, 4.5]. score = 1 + 3.5 * sigmoid((snr_db - 5) / 4) with
/// snr_db = 10*log10(sum c^2 / sum (c-d)^2); a zero residual scores 4.5.
double proxy_score(std::span<const double> clean, std::span<const double> degraded);

/// A labeled training example.
struct SegmentPair {
  std::vector<double> clean;
  std::vector<double> degraded;
  int speaker = 0;
  double score = 0.0;
};

struct DatasetSplit {
  std::vector<SegmentPair> train;
  std::vector<SegmentPair> val;
  /// Indices into the source DegradedPairSet, parallel to train/val; lets
  /// callers keep file provenance.
  std::vector<size_t> train_source;
  std::vector<size_t> val_source;
};

/// Attaches scores to degraded pairs and splits them. labels == nullptr
/// selects proxy scoring, where the speaker key of a pair is its source
/// file id. With external labels, a record matches a pair when
/// record.clean == pair.file_id and segment indices agree, and the record's
/// speaker field is looked up in speaker_map. Shuffle is a seeded
/// Fisher-Yates; val takes the first ceil(n * val_fraction) of the shuffled
/// order.
DatasetSplit assemble_dataset(const DegradedPairSet& pairs,
                              const std::vector<LabelRecord>* labels,
                              const std::map<std::string, int>& speaker_map,
                              double val_fraction, uint64_t seed);

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 8;
  int steps = 0;
  uint64_t seed = 0;
  double val_fraction = 0.1;
};

struct HistoryEntry {
  int step;
  double train_loss;
  double val_loss;
};

/// Minimizes squared error between predicted and labeled scores with Adam.
/// Batches come from seeded shuffled epochs; batch gradients are summed in
/// index order and averaged. History holds step 0 and every 50th step;
/// train_loss there is measured on a fixed probe slice (the first
/// min(200, n) examples of the training split) and val_loss on the whole
/// validation split.
std::vector<HistoryEntry> train(Model& model, const std::vector<SegmentPair>& train_set,
                                const std::vector<SegmentPair>& val_set,
                                const TrainConfig& tc);

/// Mean squared error over a set of pairs.
double dataset_mse(const Model& model, const std::vector<SegmentPair>& data);

struct EvalResult {
  double mse;
  double pearson_r;
};

EvalResult evaluate(const Model& model, const std::vector<SegmentPair>& data);

/// Checkpoint bytes: magic "DPQ1", u32 LE version 1, u32 LE config-JSON
/// length, config JSON (fields mirror ModelConfig plus a "speakers" array),
/// u32 LE parameter count, then per parameter
/// { u16 LE name length, name, u8 rank, rank x u32 LE dims, f64 LE values },
/// closed by a u32 LE CRC32 of all preceding bytes.
std::vector<uint8_t> checkpoint_bytes(const Model& model);
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);
Model checkpoint_from_bytes(const std::vector<uint8_t>& bytes);

}  // namespace dpq
