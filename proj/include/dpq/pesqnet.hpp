#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpq/grad_engine.hpp"

namespace dpq {

/// Architecture of the quality regressor. Dilations run 1, 2, 4, ...,
/// 2^max_dilation_log2 within each cycle. The defaults give a receptive
/// field of 8191 samples, twice the 4095-sample frame plus one.
struct ModelConfig {
  int kernel_size = 2;
  int dilation_cycles = 2;
  int max_dilation_log2 = 11;
  int residual_channels = 32;
  int skip_channels = 64;
  int speaker_count = 1;
  int speaker_embed_dim = 16;
  int frame_len = 4095;
};

std::vector<int> dilation_schedule(const ModelConfig& config);

/// 1 + (kernel_size - 1) * sum of all layer dilations.
int receptive_field(const ModelConfig& config);

enum class ParamMode { kTrainable, kFrozen };

struct EmpiricalRfReport {
  int samples = 0;
  bool truncated = false;
};

/// The regressor: clean and degraded frames enter as two channels, pass
/// through gated dilated convolutions with global speaker conditioning,
/// and pool into a scalar score in (-0.5, 4.5).
class Model {
 public:
  /// Seeded build. Weights are uniform in [-a, a] with a = sqrt(1/fan_in)
  /// drawn in registration order; the speaker embedding is uniform in
  /// [-0.1, 0.1]. ConfigInvalid when the receptive field is below twice
  /// the frame length or a channel count is not positive.
  static Model build(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  grad::ParamStore& params() { return params_; }
  const grad::ParamStore& params() const { return params_; }

  const std::vector<std::string>& speaker_names() const { return speaker_names_; }
  void set_speaker_names(std::vector<std::string> names);
  /// Index of a named speaker; UnknownSpeaker if absent.
  int speaker_index(const std::string& name) const;

  /// Records the score computation on an existing tape so callers can keep
  /// differentiating through it (e.g. into an enhancer that produced
  /// `degraded`). Both inputs are [1, frame_len] rows. In kFrozen mode the
  /// model parameters are bound as constants and receive no gradient.
  grad::Tensor score_graph(grad::Tape& tape, grad::Tensor clean,
                           grad::Tensor degraded, int speaker,
                           ParamMode mode) const;

  /// Convenience forward pass on a fresh tape.
  double forward(std::span<const double> clean, std::span<const double> degraded,
                 int speaker) const;

  /// Expected shape of every parameter from the config alone; the shape
  /// audit cross-checks the store against this.
  static std::vector<std::pair<std::string, grad::Shape>> expected_shapes(
      const ModelConfig& config);
  void audit_shapes() const;

  /// Summed skip activations [skip_channels, T] before the head; the probe
  /// point used by the receptive-field measurement.
  std::vector<double> probe_skip_last(std::span<const double> clean,
                                      std::span<const double> degraded,
                                      int probe_len) const;

 private:
  Model() = default;

  ModelConfig config_;
  grad::ParamStore params_;
  std::vector<std::string> speaker_names_;

  friend Model checkpoint_assemble(const ModelConfig&, grad::ParamStore,
                                   std::vector<std::string>);
};

/// Internal hook for checkpoint loading.
Model checkpoint_assemble(const ModelConfig& config, grad::ParamStore params,
                          std::vector<std::string> speaker_names);

/// Measures the receptive field by bisecting over the input position whose
/// perturbation changes the pre-pooling skip activation at the last
/// timestep. probe_len == 0 probes at the configured frame length. When the
/// probe is shorter than the analytic receptive field the result is the
/// probe length with the truncated flag set.
EmpiricalRfReport empirical_receptive_field(const Model& model, int probe_len = 0);

}  // namespace dpq
