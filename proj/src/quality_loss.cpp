#include "dpq/quality_loss.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dpq/rng.hpp"

namespace dpq {

grad::Tensor combined_loss(const Model& model, grad::Tape& tape, grad::Tensor clean,
                           grad::Tensor enhanced, int speaker,
                           const CombinedLossConfig& cfg) {
  if (cfg.lambda < 0.0 || cfg.lambda > 1.0) {
    throw Error(ErrorKind::ConfigInvalid, "lambda must be in [0, 1]");
  }
  grad::Tensor score =
      model.score_graph(tape, clean, enhanced, speaker, ParamMode::kFrozen);
  grad::Tensor perceptual = cfg.direction == ScoreDirection::kMaximizeQuality
                                ? tape.affine_const(score, -1.0, 4.5)
                                : score;
  grad::Tensor weighted_mse = tape.affine_const(tape.mse(clean, enhanced), cfg.lambda, 0.0);
  return tape.add(perceptual, weighted_mse);
}

FirEnhancer FirEnhancer::identity() {
  FirEnhancer fir;
  fir.taps.assign(kTaps, 0.0);
  fir.taps[0] = 1.0;
  return fir;
}

std::vector<double> FirEnhancer::apply(const std::vector<double>& x) const {
  std::vector<double> y(x.size(), 0.0);
  // Lag order matches the tape convolution (highest lag first) so both
  // paths produce bit-identical output.
  for (int lag = kTaps - 1; lag >= 0; --lag) {
    const double w = taps[lag];
    for (long t = lag; t < static_cast<long>(x.size()); ++t) {
      y[t] += w * x[t - lag];
    }
  }
  return y;
}

namespace {

// Conv kernel layout puts the current-time tap at index K-1, so the
// lag-ordered taps go in reversed.
std::vector<double> taps_to_kernel(const std::vector<double>& taps) {
  std::vector<double> kernel(taps.rbegin(), taps.rend());
  return kernel;
}

std::vector<double> kernel_to_taps(const std::vector<double>& kernel) {
  std::vector<double> taps(kernel.rbegin(), kernel.rend());
  return taps;
}

double mean_frame_mse(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

}  // namespace

std::pair<FirEnhancer, EnhanceMetrics> train_fir_enhancer(
    const Model& model, const std::vector<SegmentPair>& pairs,
    const CombinedLossConfig& cfg, const TrainConfig& tc) {
  if (pairs.empty()) {
    throw Error(ErrorKind::EmptyDataset, "no pairs for enhancer training");
  }
  if (!(tc.val_fraction > 0.0 && tc.val_fraction < 1.0) || tc.batch_size < 1) {
    throw Error(ErrorKind::ConfigInvalid, "bad val_fraction or batch_size");
  }
  const int frame_len = model.config().frame_len;
  for (const SegmentPair& sp : pairs) {
    if (static_cast<int>(sp.clean.size()) != frame_len ||
        static_cast<int>(sp.degraded.size()) != frame_len) {
      throw Error(ErrorKind::ShapeMismatch, "pair frames do not match model frame_len");
    }
  }

  // Seeded split, same scheme as assemble_dataset.
  const size_t n = pairs.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  SplitMix64 rng(tc.seed);
  for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
  const size_t val_count =
      std::max<size_t>(1, static_cast<size_t>(std::ceil(n * tc.val_fraction)));
  std::vector<const SegmentPair*> held_out, train_pairs;
  for (size_t i = 0; i < n; ++i) {
    (i < val_count ? held_out : train_pairs).push_back(&pairs[order[i]]);
  }
  if (train_pairs.empty()) {
    throw Error(ErrorKind::EmptyDataset, "split left no training pairs");
  }

  grad::ParamStore params;
  params.add("fir.w", {1, 1, FirEnhancer::kTaps},
             taps_to_kernel(FirEnhancer::identity().taps));

  auto held_out_metrics = [&](const FirEnhancer& fir, double* mse_out, double* score_out) {
    double mse_acc = 0.0, score_acc = 0.0;
    for (const SegmentPair* sp : held_out) {
      const std::vector<double> enhanced = fir.apply(sp->degraded);
      mse_acc += mean_frame_mse(sp->clean, enhanced);
      score_acc += model.forward(sp->clean, enhanced, sp->speaker);
    }
    *mse_out = mse_acc / static_cast<double>(held_out.size());
    *score_out = score_acc / static_cast<double>(held_out.size());
  };

  EnhanceMetrics metrics;
  held_out_metrics(FirEnhancer::identity(), &metrics.mse_before,
                   &metrics.mean_score_before);

  grad::AdamHyper hyper{tc.learning_rate, tc.beta1, tc.beta2, tc.eps};
  grad::AdamState state;
  const size_t nt = train_pairs.size();
  std::vector<size_t> epoch(nt);
  for (size_t i = 0; i < nt; ++i) epoch[i] = i;
  size_t pos = nt;

  for (int step = 1; step <= tc.steps; ++step) {
    if (pos >= nt) {
      for (size_t i = nt - 1; i > 0; --i) std::swap(epoch[i], epoch[rng.index(i + 1)]);
      pos = 0;
    }
    const size_t take = std::min<size_t>(tc.batch_size, nt - pos);

    grad::GradMap batch_grads;
    for (size_t b = 0; b < take; ++b) {
      const SegmentPair& sp = *train_pairs[epoch[pos + b]];
      grad::Tape tape;
      grad::Tensor clean = tape.input({1, frame_len}, sp.clean);
      grad::Tensor degraded = tape.input({1, frame_len}, sp.degraded);
      grad::Tensor fir_w = tape.param("fir.w", {1, 1, FirEnhancer::kTaps},
                                      params.at("fir.w").values);
      grad::Tensor zero_bias = tape.input({1}, {0.0});
      grad::Tensor enhanced = tape.conv1d_causal(degraded, fir_w, zero_bias, 1);
      grad::Tensor loss = combined_loss(model, tape, clean, enhanced, sp.speaker, cfg);
      grad::GradMap grads = tape.backward(loss);
      if (batch_grads.empty()) {
        batch_grads = std::move(grads);
      } else {
        auto& g = batch_grads.at("fir.w");
        const auto& add = grads.at("fir.w");
        for (size_t i = 0; i < g.size(); ++i) g[i] += add[i];
      }
    }
    pos += take;
    const double inv = 1.0 / static_cast<double>(take);
    for (double& v : batch_grads.at("fir.w")) v *= inv;
    grad::adam_step(params, batch_grads, state, hyper, step);
  }

  FirEnhancer fir;
  fir.taps = kernel_to_taps(params.at("fir.w").values);
  held_out_metrics(fir, &metrics.mse_after, &metrics.mean_score_after);
  return {std::move(fir), metrics};
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error(ErrorKind::DegenerateInput, "pearson needs two equal-length series, n >= 2");
  }
  const double n = static_cast<double>(x.size());
  double mean_x = 0.0, mean_y = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mean_x += x[i];
    mean_y += y[i];
  }
  mean_x /= n;
  mean_y /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mean_x;
    const double dy = y[i] - mean_y;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw Error(ErrorKind::DegenerateInput, "pearson on zero-variance input");
  }
  return sxy / std::sqrt(sxx * syy);
}

CorrelationResult correlation_study(const std::string& scores_csv_path) {
  std::ifstream in(scores_csv_path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + scores_csv_path);

  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorKind::ParseError, scores_csv_path + ": empty file");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "file_id,segment_score,full_score") {
    throw Error(ErrorKind::ParseError,
                scores_csv_path + ": expected header file_id,segment_score,full_score");
  }

  std::vector<std::string> ids;
  std::vector<double> segment_scores, full_scores;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t c1 = line.find(',');
    const size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw Error(ErrorKind::ParseError,
                  scores_csv_path + ":" + std::to_string(line_no) + ": expected 3 columns");
    }
    try {
      ids.push_back(line.substr(0, c1));
      segment_scores.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
      full_scores.push_back(std::stod(line.substr(c2 + 1)));
    } catch (const std::exception&) {
      throw Error(ErrorKind::ParseError,
                  scores_csv_path + ":" + std::to_string(line_no) + ": bad number");
    }
  }
  if (ids.size() < 2) {
    throw Error(ErrorKind::DegenerateInput, "correlation study needs at least 2 rows");
  }

  CorrelationResult result;
  result.r = pearson(segment_scores, full_scores);
  result.n = ids.size();

  const std::filesystem::path out_path =
      std::filesystem::path(scores_csv_path).parent_path() / "scatter.csv";
  std::ostringstream out;
  out << "file_id,segment_score,full_score\n";
  out.precision(17);
  for (size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << ',' << segment_scores[i] << ',' << full_scores[i] << '\n';
  }
  const std::string text = out.str();
  const std::string tmp = out_path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw Error(ErrorKind::IoError, "cannot open " + tmp);
    f << text;
    if (!f) throw Error(ErrorKind::IoError, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, out_path);
  result.scatter_path = out_path.string();
  return result;
}

}  // namespace dpq
