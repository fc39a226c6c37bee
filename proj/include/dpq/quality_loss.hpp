#pragma once

#include <string>
#include <vector>

#include "dpq/pesqnet.hpp"
#include "dpq/training.hpp"

namespace dpq {

/// Direction of the perceptual term. Minimizing the raw score P would
/// reward degradation when P predicts quality, so the default negates it;
/// the plain form stays available behind this switch.
enum class ScoreDirection { kMaximizeQuality, kMinimizeScore };

struct CombinedLossConfig {
  double lambda = 1.0;  // in [0, 1]
  ScoreDirection direction = ScoreDirection::kMaximizeQuality;
};

/// Perceptual + lambda * MSE, recorded on the caller's tape. Model
/// parameters are bound frozen, so gradient reaches `enhanced` (and
/// anything it was computed from) but never the model.
/// kMaximizeQuality: (4.5 - P) + lambda * MSE; kMinimizeScore: P + lambda * MSE.
grad::Tensor combined_loss(const Model& model, grad::Tape& tape, grad::Tensor clean,
                           grad::Tensor enhanced, int speaker,
                           const CombinedLossConfig& cfg);

/// 64-tap causal FIR; taps[lag], lag 0 is the current sample.
struct FirEnhancer {
  static constexpr int kTaps = 64;
  std::vector<double> taps;

  /// Identity impulse: tap for lag 0 is 1, the rest 0.
  static FirEnhancer identity();
  /// y[t] = sum_lag taps[lag] * x[t - lag], zero-padded on the left.
  std::vector<double> apply(const std::vector<double>& x) const;
};

struct EnhanceMetrics {
  double mse_before = 0.0;
  double mse_after = 0.0;
  double mean_score_before = 0.0;
  double mean_score_after = 0.0;
};

/// Trains the FIR by Adam on combined_loss over enhanced = FIR(degraded)
/// with the model frozen. Pairs are split once (seeded shuffle,
/// tc.val_fraction held out) and the metrics report held-out MSE against
/// clean and mean predicted score, before (identity taps) and after.
std::pair<FirEnhancer, EnhanceMetrics> train_fir_enhancer(
    const Model& model, const std::vector<SegmentPair>& pairs,
    const CombinedLossConfig& cfg, const TrainConfig& tc);

/// Sample Pearson correlation; DegenerateInput on length < 2 or zero
/// variance.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct CorrelationResult {
  double r = 0.0;
  size_t n = 0;
  std::string scatter_path;
};

/// Reads a CSV with header `file_id,segment_score,full_score`, correlates
/// the two score columns and writes a scatter.csv copy of the points next
/// to the input file.
CorrelationResult correlation_study(const std::string& scores_csv_path);

}  // namespace dpq
