#include <doctest.h>

#include <cmath>
#include <fstream>

#include "dpq/quality_loss.hpp"
#include "dpq/rng.hpp"
#include "helpers.hpp"

using namespace dpq;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.kernel_size = 2;
  cfg.dilation_cycles = 1;
  cfg.max_dilation_log2 = 3;
  cfg.residual_channels = 4;
  cfg.skip_channels = 5;
  cfg.speaker_count = 2;
  cfg.speaker_embed_dim = 3;
  cfg.frame_len = 8;
  return cfg;
}

std::vector<double> random_frame(int len, SplitMix64& rng) {
  std::vector<double> v(len);
  for (double& x : v) x = rng.uniform(-0.8, 0.8);
  return v;
}

double run_combined(const Model& model, const std::vector<double>& clean,
                    const std::vector<double>& enhanced, int speaker,
                    const CombinedLossConfig& cfg) {
  grad::Tape tape;
  grad::Tensor c = tape.input({1, static_cast<int>(clean.size())}, clean);
  grad::Tensor e = tape.input({1, static_cast<int>(enhanced.size())}, enhanced);
  return combined_loss(model, tape, c, e, speaker, cfg).scalar();
}

// Definition-based oracle in the plainest possible form.
double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / (std::sqrt(sxx) * std::sqrt(syy));
}

}  // namespace

TEST_CASE("combined_loss modes and identities") {
  const Model model = Model::build(tiny_config(), 71);
  SplitMix64 rng(72);
  const auto clean = random_frame(8, rng);
  const auto enhanced = random_frame(8, rng);
  const double p = model.forward(clean, enhanced, 0);

  SUBCASE("lambda 0 leaves only the perceptual term, exactly") {
    CombinedLossConfig cfg;
    cfg.lambda = 0.0;
    const double loss_default = run_combined(model, clean, enhanced, 0, cfg);
    CHECK(loss_default == 4.5 - p);

    cfg.direction = ScoreDirection::kMinimizeScore;
    const double loss_literal = run_combined(model, clean, enhanced, 0, cfg);
    CHECK(loss_literal == p);

    // The two perceptual terms close to 4.5 exactly.
    CHECK(loss_default + loss_literal == 4.5);
  }

  SUBCASE("enhanced == clean zeroes the mse term") {
    CombinedLossConfig cfg;
    cfg.lambda = 0.7;
    const double self_score = model.forward(clean, clean, 0);
    CHECK(run_combined(model, clean, clean, 0, cfg) == 4.5 - self_score);
  }

  SUBCASE("modes agree on the mse contribution and perceptual identity") {
    CombinedLossConfig cfg;
    cfg.lambda = 0.4;
    double mse = 0.0;
    for (size_t i = 0; i < clean.size(); ++i) {
      mse += (clean[i] - enhanced[i]) * (clean[i] - enhanced[i]);
    }
    mse /= static_cast<double>(clean.size());
    const double weighted = cfg.lambda * mse;

    const double loss_default = run_combined(model, clean, enhanced, 0, cfg);
    cfg.direction = ScoreDirection::kMinimizeScore;
    const double loss_literal = run_combined(model, clean, enhanced, 0, cfg);

    CHECK(loss_default == (-1.0 * p + 4.5) + weighted);
    CHECK(loss_literal == p + weighted);
    CHECK((4.5 - p) + p == 4.5);
  }

  SUBCASE("default mode is monotone in each term of the combination") {
    // Exact affine structure: a delta on the score lowers the loss by that
    // delta, a delta on the mse raises it by lambda times the delta.
    grad::Tape tape;
    const double lambda = 0.3;
    auto loss_from = [&](double score, double mse) {
      grad::Tensor s = tape.input({1}, {score});
      grad::Tensor m = tape.input({1}, {mse});
      return tape
          .add(tape.affine_const(s, -1.0, 4.5), tape.affine_const(m, lambda, 0.0))
          .scalar();
    };
    const double base = loss_from(2.0, 0.5);
    CHECK(loss_from(2.0 + 0.25, 0.5) == base - 0.25);
    CHECK(loss_from(2.0, 0.5 + 0.25) == base + lambda * 0.25);
  }

  SUBCASE("rejects lambda outside [0, 1]") {
    CombinedLossConfig cfg;
    cfg.lambda = 1.5;
    CHECK_THROWS_AS(run_combined(model, clean, enhanced, 0, cfg), Error);
  }
}

TEST_CASE("combined_loss gradient reaches enhanced but not the model") {
  const Model model = Model::build(tiny_config(), 73);
  SplitMix64 rng(74);
  const auto clean = random_frame(8, rng);
  const auto enhanced = random_frame(8, rng);
  CombinedLossConfig cfg;
  cfg.lambda = 1.0;

  grad::Tape tape;
  grad::Tensor c = tape.input({1, 8}, clean);
  grad::Tensor e = tape.param("enhanced", {1, 8}, enhanced);
  grad::Tensor loss = combined_loss(model, tape, c, e, 1, cfg);
  const grad::GradMap grads = tape.backward(loss);

  // Frozen model parameters are bound as constants: the gradient map holds
  // nothing but the enhanced frame, and the stored parameters are untouched.
  CHECK(grads.size() == 1);
  CHECK(grads.count("enhanced") == 1);
  double norm = 0.0;
  for (double g : grads.at("enhanced")) norm += g * g;
  CHECK(norm > 0.0);

  const Model reference = Model::build(tiny_config(), 73);
  for (const auto& [name, param] : model.params().entries) {
    CHECK(param.values == reference.params().at(name).values);
  }
}

TEST_CASE("combined_loss gradient matches finite differences") {
  const Model model = Model::build(tiny_config(), 75);
  SplitMix64 rng(76);
  const auto clean = random_frame(8, rng);
  const auto enhanced = random_frame(8, rng);
  CombinedLossConfig cfg;
  cfg.lambda = 0.5;

  grad::Tape tape;
  grad::Tensor c = tape.input({1, 8}, clean);
  grad::Tensor e = tape.param("enhanced", {1, 8}, enhanced);
  grad::Tensor loss = combined_loss(model, tape, c, e, 0, cfg);
  const grad::GradMap grads = tape.backward(loss);

  const double eps = 1e-5;
  double max_rel = 0.0;
  for (size_t i = 0; i < enhanced.size(); ++i) {
    auto perturbed = enhanced;
    perturbed[i] = enhanced[i] + eps;
    const double plus = run_combined(model, clean, perturbed, 0, cfg);
    perturbed[i] = enhanced[i] - eps;
    const double minus = run_combined(model, clean, perturbed, 0, cfg);
    const double numeric = (plus - minus) / (2.0 * eps);
    const double exact = grads.at("enhanced")[i];
    const double denom = std::max({std::fabs(exact), std::fabs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::fabs(exact - numeric) / denom);
  }
  CHECK(max_rel < 1e-6);
}

TEST_CASE("FirEnhancer application") {
  SUBCASE("identity taps copy the input") {
    SplitMix64 rng(81);
    std::vector<double> x(100);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    const FirEnhancer fir = FirEnhancer::identity();
    CHECK(fir.apply(x) == x);
  }

  SUBCASE("plain apply matches the tape convolution bitwise") {
    SplitMix64 rng(82);
    FirEnhancer fir;
    fir.taps.resize(FirEnhancer::kTaps);
    for (double& t : fir.taps) t = rng.uniform(-0.2, 0.2);
    std::vector<double> x(200);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);

    grad::Tape tape;
    std::vector<double> kernel(fir.taps.rbegin(), fir.taps.rend());
    grad::Tensor y = tape.conv1d_causal(tape.input({1, 200}, x),
                                        tape.input({1, 1, FirEnhancer::kTaps}, kernel),
                                        tape.input({1}, {0.0}), 1);
    const auto direct = fir.apply(x);
    for (size_t i = 0; i < direct.size(); ++i) CHECK(direct[i] == y.values()[i]);
  }

  SUBCASE("output is causal over 64 taps") {
    FirEnhancer fir;
    fir.taps.assign(FirEnhancer::kTaps, 0.01);
    std::vector<double> x(256, 0.0);
    x[100] = 1.0;
    const auto y = fir.apply(x);
    for (int t = 0; t < 100; ++t) CHECK(y[t] == 0.0);
    for (int t = 100; t < 100 + 64; ++t) CHECK(y[t] != 0.0);
    for (int t = 164; t < 256; ++t) CHECK(y[t] == 0.0);
  }
}

TEST_CASE("train_fir_enhancer") {
  const Model model = Model::build(tiny_config(), 91);
  SplitMix64 rng(92);
  std::vector<SegmentPair> pairs(12);
  for (SegmentPair& sp : pairs) {
    sp.clean.resize(8);
    sp.degraded.resize(8);
    for (int i = 0; i < 8; ++i) {
      sp.clean[i] = rng.uniform(-0.5, 0.5);
      sp.degraded[i] = sp.clean[i] + rng.uniform(-0.2, 0.2);
    }
    sp.speaker = static_cast<int>(rng.index(2));
    sp.score = 3.0;
  }
  CombinedLossConfig cfg;
  cfg.lambda = 1.0;

  SUBCASE("zero steps keeps the identity and reports before == after") {
    TrainConfig tc;
    tc.steps = 0;
    tc.seed = 93;
    const auto [fir, metrics] = train_fir_enhancer(model, pairs, cfg, tc);
    CHECK(fir.taps == FirEnhancer::identity().taps);
    CHECK(metrics.mse_before == metrics.mse_after);
    CHECK(metrics.mean_score_before == metrics.mean_score_after);
  }

  SUBCASE("same seed gives identical taps") {
    TrainConfig tc;
    tc.steps = 30;
    tc.batch_size = 4;
    tc.seed = 94;
    const auto [fir_a, ma] = train_fir_enhancer(model, pairs, cfg, tc);
    const auto [fir_b, mb] = train_fir_enhancer(model, pairs, cfg, tc);
    CHECK(fir_a.taps == fir_b.taps);
    CHECK(ma.mse_after == mb.mse_after);
  }

  SUBCASE("empty pair list is rejected") {
    TrainConfig tc;
    CHECK_THROWS_AS(train_fir_enhancer(model, {}, cfg, tc), Error);
  }
}

TEST_CASE("pearson") {
  SplitMix64 rng(95);
  std::vector<double> x(64), y(64);
  for (size_t i = 0; i < 64; ++i) {
    x[i] = rng.uniform(-3.0, 3.0);
    y[i] = 0.5 * x[i] + rng.uniform(-1.0, 1.0);
  }

  SUBCASE("self correlation is 1") {
    CHECK(std::fabs(pearson(x, x) - 1.0) <= 1e-12);
  }

  SUBCASE("negated correlation is -1") {
    std::vector<double> neg(64);
    for (size_t i = 0; i < 64; ++i) neg[i] = -x[i];
    CHECK(std::fabs(pearson(x, neg) + 1.0) <= 1e-12);
  }

  SUBCASE("random vectors match the definition oracle") {
    CHECK(std::fabs(pearson(x, y) - pearson_oracle(x, y)) <= 1e-12);
  }

  SUBCASE("invariant under positive affine maps") {
    std::vector<double> mapped(64);
    for (size_t i = 0; i < 64; ++i) mapped[i] = 2.5 * x[i] + 7.0;
    CHECK(std::fabs(pearson(mapped, y) - pearson(x, y)) <= 1e-12);
  }

  SUBCASE("degenerate inputs are rejected") {
    CHECK_THROWS_AS(pearson({1.0}, {2.0}), Error);
    CHECK_THROWS_AS(pearson({1.0, 1.0}, {1.0, 2.0}), Error);
    CHECK_THROWS_AS(pearson({1.0, 2.0}, {1.0, 2.0, 3.0}), Error);
  }
}

TEST_CASE("correlation_study") {
  test::TempDir tmp("corr");

  SUBCASE("identical columns give r == 1 and a scatter copy") {
    std::ofstream f(tmp.file("scores.csv"));
    f << "file_id,segment_score,full_score\n";
    f << "a,1.5,1.5\nb,2.5,2.5\nc,3.5,3.5\n";
    f.close();
    const CorrelationResult result = correlation_study(tmp.file("scores.csv"));
    CHECK(std::fabs(result.r - 1.0) <= 1e-12);
    CHECK(result.n == 3);
    std::ifstream scatter(result.scatter_path);
    REQUIRE(scatter.good());
    std::string header;
    std::getline(scatter, header);
    CHECK(header == "file_id,segment_score,full_score");
  }

  SUBCASE("seeded bivariate construction matches its oracle within 1e-9") {
    SplitMix64 rng(96);
    std::vector<double> seg(100), full(100);
    std::ofstream f(tmp.file("synth.csv"));
    f << "file_id,segment_score,full_score\n";
    f.precision(17);
    for (int i = 0; i < 100; ++i) {
      seg[i] = rng.uniform(1.0, 4.5);
      full[i] = 0.8 * seg[i] + 0.6 * rng.uniform(-1.0, 1.0) + 0.5;
      f << "p" << i << "," << seg[i] << "," << full[i] << "\n";
    }
    f.close();
    const double oracle = pearson_oracle(seg, full);
    const CorrelationResult result = correlation_study(tmp.file("synth.csv"));
    CHECK(std::fabs(result.r - oracle) <= 1e-9);
  }

  SUBCASE("bad header is a parse error") {
    std::ofstream f(tmp.file("bad.csv"));
    f << "id,seg,full\n"
      << "a,1,1\n";
    f.close();
    CHECK_THROWS_AS(correlation_study(tmp.file("bad.csv")), Error);
  }

  SUBCASE("one data row is degenerate") {
    std::ofstream f(tmp.file("one.csv"));
    f << "file_id,segment_score,full_score\n"
      << "a,1,1\n";
    f.close();
    CHECK_THROWS_AS(correlation_study(tmp.file("one.csv")), Error);
  }
}
