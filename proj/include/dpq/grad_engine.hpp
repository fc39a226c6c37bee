#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dpq/error.hpp"

namespace dpq::grad {

/// Row-major dense shapes, rank 1..3.
using Shape = std::vector<int>;

long element_count(const Shape& shape);

class Tape;

/// Handle to a node on a Tape. Values (and, after backward, gradients) are
/// owned by the tape; the handle stays valid for the tape's lifetime.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  const Shape& shape() const;
  std::span<const double> values() const;
  /// Value of a single-element tensor.
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

using GradMap = std::map<std::string, std::vector<double>>;

/// Records a computation over dense double arrays and differentiates it in
/// exact reverse record order. Confined to one thread; independent tapes may
/// run concurrently. Every operation validates shapes and checks that all
/// produced values are finite.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-trainable leaf (inputs, frozen parameters, constants).
  Tensor input(Shape shape, std::vector<double> values);

  /// Trainable leaf registered under a unique name.
  Tensor param(const std::string& name, Shape shape, std::vector<double> values);

  /// Causal dilated convolution. x: [C_in, T], w: [C_out, C_in, K],
  /// b: [C_out] -> [C_out, T]. Tap k reads x[t - dilation*(K-1-k)]; index
  /// K-1 is current time; out-of-range reads are zero (left padding).
  Tensor conv1d_causal(Tensor x, Tensor w, Tensor b, int dilation);

  Tensor add(Tensor a, Tensor b);
  Tensor mul(Tensor a, Tensor b);
  Tensor tanh(Tensor a);
  Tensor sigmoid(Tensor a);
  Tensor relu(Tensor a);

  Tensor sum(Tensor a);
  Tensor mean(Tensor a);
  /// [C, T] -> [C], per-channel mean over time.
  Tensor global_avg_over_time(Tensor a);

  /// x: [D_in], w: [D_out, D_in], b: [D_out] -> [D_out].
  Tensor affine(Tensor x, Tensor w, Tensor b);

  /// Mean squared difference -> scalar.
  Tensor mse(Tensor a, Tensor b);

  /// Row `row` of table [R, D] -> [D]; gradient flows into that row only.
  Tensor embed_row(Tensor table, int row);

  /// x: [C, T] plus per-channel vector v: [C], broadcast over time.
  Tensor add_channel(Tensor x, Tensor v);

  /// scale * x + shift with compile-time-constant coefficients.
  Tensor affine_const(Tensor x, double scale, double shift);

  /// Two [1, T] rows stacked into [2, T].
  Tensor stack2(Tensor a, Tensor b);

  /// Gradients of a scalar loss with respect to every registered parameter,
  /// visiting nodes in exact reverse record order with summation in fixed
  /// index order. Parameters the loss does not reach get zero gradients.
  GradMap backward(Tensor loss);

  /// Accumulated gradient of any node; valid after backward().
  std::span<const double> grad(Tensor t) const;

  const Shape& shape_of(int id) const { return nodes_[id].shape; }
  std::span<const double> values_of(int id) const { return nodes_[id].values; }
  size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : uint8_t {
    kLeaf,
    kConv1dCausal,
    kAdd,
    kMul,
    kTanh,
    kSigmoid,
    kRelu,
    kSum,
    kMean,
    kGlobalAvgTime,
    kAffine,
    kMse,
    kEmbedRow,
    kAddChannel,
    kAffineConst,
    kStack2,
  };

  struct Node {
    Op op = Op::kLeaf;
    int in0 = -1, in1 = -1, in2 = -1;
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    int dilation = 1;    // conv
    int row = 0;         // embed_row
    double scale = 1.0;  // affine_const
    double shift = 0.0;
    std::string name;  // registered parameter name, empty otherwise
  };

  int push(Node node);
  void check_finite(const Node& node) const;
  void backprop_node(int id);
  const Node& node(Tensor t) const;

  std::vector<Node> nodes_;
  std::map<std::string, int> params_;
  bool grads_valid_ = false;

  friend class Tensor;
};

/// Named parameter set persisted across tapes; the bridge between recorded
/// graphs and the optimizer.
struct Param {
  Shape shape;
  std::vector<double> values;
};

struct ParamStore {
  std::map<std::string, Param> entries;

  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  void add(const std::string& name, Shape shape, std::vector<double> values);
};

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

/// One Adam update with bias correction, applied in parameter-name order.
/// step is 1-based.
void adam_step(ParamStore& params, const GradMap& grads, AdamState& state,
               const AdamHyper& hyper, int step);

/// Self-check harness: builds a seeded dilated gated-convolution graph from
/// the description below and compares backward() against central finite
/// differences for every parameter entry (seeded subsample above 10000).
struct GradCheckConfig {
  int layers = 3;
  int frame = 32;
  int channels = 6;
  int kernel = 2;
  uint64_t seed = 1;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  long entries_checked = 0;
  bool pass = false;
};

GradCheckReport check_gradients(const GradCheckConfig& cfg, double epsilon,
                                double tolerance);

}  // namespace dpq::grad
