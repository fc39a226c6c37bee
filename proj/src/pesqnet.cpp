#include "dpq/pesqnet.hpp"

#include <algorithm>
#include <cmath>

#include "dpq/rng.hpp"

namespace dpq {

using grad::Shape;
using grad::Tape;
using grad::Tensor;

std::vector<int> dilation_schedule(const ModelConfig& config) {
  std::vector<int> dilations;
  for (int cycle = 0; cycle < config.dilation_cycles; ++cycle) {
    for (int lvl = 0; lvl <= config.max_dilation_log2; ++lvl) {
      dilations.push_back(1 << lvl);
    }
  }
  return dilations;
}

int receptive_field(const ModelConfig& config) {
  long sum = 0;
  for (int d : dilation_schedule(config)) sum += d;
  return static_cast<int>(1 + static_cast<long>(config.kernel_size - 1) * sum);
}

namespace {

std::string layer_prefix(int layer) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "layer%02d.", layer);
  return buf;
}

void validate_config(const ModelConfig& c) {
  if (c.kernel_size < 1 || c.dilation_cycles < 1 || c.max_dilation_log2 < 0) {
    throw Error(ErrorKind::ConfigInvalid, "kernel/cycle/dilation fields must be positive");
  }
  if (c.residual_channels < 1 || c.skip_channels < 1 || c.speaker_embed_dim < 1 ||
      c.speaker_count < 1 || c.frame_len < 1) {
    throw Error(ErrorKind::ConfigInvalid, "channel and size fields must be positive");
  }
  const int rf = receptive_field(c);
  if (rf < 2 * c.frame_len) {
    throw Error(ErrorKind::ConfigInvalid,
                "receptive field " + std::to_string(rf) + " is below twice the frame length " +
                    std::to_string(2 * c.frame_len));
  }
}

}  // namespace

std::vector<std::pair<std::string, Shape>> Model::expected_shapes(
    const ModelConfig& c) {
  const int r = c.residual_channels;
  const int s = c.skip_channels;
  const int e = c.speaker_embed_dim;
  const int k = c.kernel_size;
  std::vector<std::pair<std::string, Shape>> out;
  out.push_back({"embedding", {c.speaker_count, e}});
  out.push_back({"input.w", {r, 2, 1}});
  out.push_back({"input.b", {r}});
  const int layers = c.dilation_cycles * (c.max_dilation_log2 + 1);
  for (int l = 0; l < layers; ++l) {
    const std::string p = layer_prefix(l);
    out.push_back({p + "filter.w", {r, r, k}});
    out.push_back({p + "filter.b", {r}});
    out.push_back({p + "gate.w", {r, r, k}});
    out.push_back({p + "gate.b", {r}});
    out.push_back({p + "cond_filter.w", {r, e}});
    out.push_back({p + "cond_filter.b", {r}});
    out.push_back({p + "cond_gate.w", {r, e}});
    out.push_back({p + "cond_gate.b", {r}});
    out.push_back({p + "residual.w", {r, r, 1}});
    out.push_back({p + "residual.b", {r}});
    out.push_back({p + "skip.w", {s, r, 1}});
    out.push_back({p + "skip.b", {s}});
  }
  out.push_back({"post.w", {s, s, 1}});
  out.push_back({"post.b", {s}});
  out.push_back({"head.w", {1, s}});
  out.push_back({"head.b", {1}});
  return out;
}

Model Model::build(const ModelConfig& config, uint64_t seed) {
  validate_config(config);

  Model model;
  model.config_ = config;
  model.speaker_names_.resize(config.speaker_count);
  for (int i = 0; i < config.speaker_count; ++i) {
    model.speaker_names_[i] = "s" + std::to_string(i);
  }

  SplitMix64 rng(seed);
  for (const auto& [name, shape] : expected_shapes(config)) {
    std::vector<double> values(grad::element_count(shape));
    if (name == "embedding") {
      for (double& v : values) v = rng.uniform(-0.1, 0.1);
    } else {
      // fan_in: product of all dimensions except the leading output one.
      long fan_in = 1;
      for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
      if (shape.size() == 1) fan_in = shape[0];
      const double a = std::sqrt(1.0 / static_cast<double>(fan_in));
      for (double& v : values) v = rng.uniform(-a, a);
    }
    model.params_.add(name, shape, std::move(values));
  }
  return model;
}

void Model::set_speaker_names(std::vector<std::string> names) {
  if (static_cast<int>(names.size()) != config_.speaker_count) {
    throw Error(ErrorKind::ConfigInvalid,
                "speaker name table size " + std::to_string(names.size()) +
                    " does not match speaker_count " +
                    std::to_string(config_.speaker_count));
  }
  speaker_names_ = std::move(names);
}

int Model::speaker_index(const std::string& name) const {
  for (size_t i = 0; i < speaker_names_.size(); ++i) {
    if (speaker_names_[i] == name) return static_cast<int>(i);
  }
  throw Error(ErrorKind::UnknownSpeaker, name);
}

void Model::audit_shapes() const {
  const auto expected = expected_shapes(config_);
  if (expected.size() != params_.entries.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "parameter count " + std::to_string(params_.entries.size()) +
                    ", expected " + std::to_string(expected.size()));
  }
  for (const auto& [name, shape] : expected) {
    const grad::Param& p = params_.at(name);
    if (p.shape != shape) {
      throw Error(ErrorKind::ShapeMismatch, "parameter '" + name + "' has a wrong shape");
    }
  }
}

namespace {

struct Binder {
  Tape& tape;
  const grad::ParamStore& store;
  ParamMode mode;

  Tensor operator()(const std::string& name) const {
    const grad::Param& p = store.at(name);
    return mode == ParamMode::kTrainable ? tape.param(name, p.shape, p.values)
                                         : tape.input(p.shape, p.values);
  }
};

// Shared trunk: everything up to the summed skip activations [S, T].
Tensor skip_sum_graph(Tape& tape, const ModelConfig& cfg, const Binder& bind,
                      Tensor stacked, int speaker) {
  Tensor embed = tape.embed_row(bind("embedding"), speaker);
  Tensor h = tape.conv1d_causal(stacked, bind("input.w"), bind("input.b"), 1);

  Tensor skip;
  bool have_skip = false;
  const auto dilations = dilation_schedule(cfg);
  for (size_t l = 0; l < dilations.size(); ++l) {
    const std::string p = layer_prefix(static_cast<int>(l));
    Tensor cond_f = tape.affine(embed, bind(p + "cond_filter.w"), bind(p + "cond_filter.b"));
    Tensor cond_g = tape.affine(embed, bind(p + "cond_gate.w"), bind(p + "cond_gate.b"));
    Tensor f = tape.tanh(tape.add_channel(
        tape.conv1d_causal(h, bind(p + "filter.w"), bind(p + "filter.b"), dilations[l]),
        cond_f));
    Tensor g = tape.sigmoid(tape.add_channel(
        tape.conv1d_causal(h, bind(p + "gate.w"), bind(p + "gate.b"), dilations[l]),
        cond_g));
    Tensor z = tape.mul(f, g);
    h = tape.add(h, tape.conv1d_causal(z, bind(p + "residual.w"), bind(p + "residual.b"), 1));
    Tensor s = tape.conv1d_causal(z, bind(p + "skip.w"), bind(p + "skip.b"), 1);
    skip = have_skip ? tape.add(skip, s) : s;
    have_skip = true;
  }
  return skip;
}

}  // namespace

Tensor Model::score_graph(Tape& tape, Tensor clean, Tensor degraded, int speaker,
                          ParamMode mode) const {
  if (speaker < 0 || speaker >= config_.speaker_count) {
    throw Error(ErrorKind::SpeakerOutOfRange,
                std::to_string(speaker) + " of " + std::to_string(config_.speaker_count));
  }
  const Shape want{1, config_.frame_len};
  if (clean.shape() != want || degraded.shape() != want) {
    throw Error(ErrorKind::ShapeMismatch,
                "score_graph frames must be [1, " + std::to_string(config_.frame_len) + "]");
  }

  Binder bind{tape, params_, mode};
  Tensor stacked = tape.stack2(clean, degraded);
  Tensor skip = skip_sum_graph(tape, config_, bind, stacked, speaker);
  Tensor post = tape.relu(
      tape.conv1d_causal(tape.relu(skip), bind("post.w"), bind("post.b"), 1));
  Tensor pooled = tape.global_avg_over_time(post);
  Tensor z = tape.affine(pooled, bind("head.w"), bind("head.b"));
  return tape.affine_const(tape.sigmoid(z), 5.0, -0.5);
}

double Model::forward(std::span<const double> clean, std::span<const double> degraded,
                      int speaker) const {
  if (static_cast<int>(clean.size()) != config_.frame_len ||
      static_cast<int>(degraded.size()) != config_.frame_len) {
    throw Error(ErrorKind::ShapeMismatch,
                "forward frames must hold " + std::to_string(config_.frame_len) + " samples");
  }
  Tape tape;
  Tensor c = tape.input({1, config_.frame_len},
                        std::vector<double>(clean.begin(), clean.end()));
  Tensor d = tape.input({1, config_.frame_len},
                        std::vector<double>(degraded.begin(), degraded.end()));
  return score_graph(tape, c, d, speaker, ParamMode::kFrozen).scalar();
}

std::vector<double> Model::probe_skip_last(std::span<const double> clean,
                                           std::span<const double> degraded,
                                           int probe_len) const {
  Tape tape;
  Tensor c = tape.input({1, probe_len}, std::vector<double>(clean.begin(), clean.end()));
  Tensor d = tape.input({1, probe_len},
                        std::vector<double>(degraded.begin(), degraded.end()));
  Binder bind{tape, params_, ParamMode::kFrozen};
  Tensor stacked = tape.stack2(c, d);
  Tensor skip = skip_sum_graph(tape, config_, bind, stacked, 0);
  auto all = skip.values();
  const int s = config_.skip_channels;
  std::vector<double> last(s);
  for (int ch = 0; ch < s; ++ch) {
    last[ch] = all[static_cast<size_t>(ch) * probe_len + probe_len - 1];
  }
  return last;
}

Model checkpoint_assemble(const ModelConfig& config, grad::ParamStore params,
                          std::vector<std::string> speaker_names) {
  validate_config(config);
  Model model;
  model.config_ = config;
  model.params_ = std::move(params);
  model.speaker_names_ = std::move(speaker_names);
  model.audit_shapes();
  if (static_cast<int>(model.speaker_names_.size()) != config.speaker_count) {
    throw Error(ErrorKind::ConfigInvalid, "speaker table does not match speaker_count");
  }
  return model;
}

EmpiricalRfReport empirical_receptive_field(const Model& model, int probe_len) {
  const ModelConfig& cfg = model.config();
  const int t_len = probe_len > 0 ? probe_len : cfg.frame_len;
  if (t_len < 1) {
    throw Error(ErrorKind::FrameTooShort, "probe length must be positive");
  }

  SplitMix64 rng(0x70726F6265ULL);  // fixed probe seed
  std::vector<double> clean(t_len), degraded(t_len);
  for (double& v : clean) v = rng.uniform(-1.0, 1.0);
  for (double& v : degraded) v = rng.uniform(-1.0, 1.0);

  const std::vector<double> baseline = model.probe_skip_last(clean, degraded, t_len);

  // Perturbing both channels at position p changes the last-timestep skip
  // activation iff p is inside the receptive field, so the predicate is
  // monotone in p and bisection applies.
  auto changed = [&](int p) {
    std::vector<double> c2 = clean, d2 = degraded;
    c2[p] += 0.5;
    d2[p] += 0.5;
    const std::vector<double> probe = model.probe_skip_last(c2, d2, t_len);
    for (size_t i = 0; i < probe.size(); ++i) {
      if (probe[i] != baseline[i]) return true;
    }
    return false;
  };

  int first_reaching;
  if (changed(0)) {
    first_reaching = 0;
  } else {
    int lo = 0;            // known unchanged
    int hi = t_len - 1;    // perturbing the probed timestep always reaches it
    while (hi - lo > 1) {
      const int mid = lo + (hi - lo) / 2;
      if (changed(mid)) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    first_reaching = hi;
  }

  EmpiricalRfReport report;
  report.samples = t_len - first_reaching;
  report.truncated = receptive_field(cfg) > t_len;
  return report;
}

}  // namespace dpq
