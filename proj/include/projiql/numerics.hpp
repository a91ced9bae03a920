#pragma once

// Dense float64 tensors, a tape for reverse-mode differentiation, small MLPs,
// an adaptive-moment optimizer and a central-difference gradient checker.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace projiql::nn {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  /// Trailing dimension.
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  /// Product of every dimension except the trailing one.
  std::size_t rows() const { return cols() == 0 ? 0 : data_.size() / cols(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// Value of a one-element tensor.
  double item() const;
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

enum class Activation { relu, tanh, identity };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct Layer {
  Tensor weight;  // out x in
  Tensor bias;    // out
  Activation activation = Activation::identity;
  double dropout = 0.0;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
  friend bool operator==(const Layer&, const Layer&) = default;
};

class MlpParams {
 public:
  MlpParams() = default;
  explicit MlpParams(std::vector<Layer> layers);

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t in_dim() const { return layers_.front().in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }
  std::size_t parameter_count() const;

  /// Flat [W0, b0, W1, b1, ...] view, the order used for gradients and optimizer state.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::string tensor_name(std::size_t flat_index) const;

  /// Throws ShapeError/ValidationError on an inconsistent stack.
  void validate() const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;

 private:
  std::vector<Layer> layers_;
};

/// Dense stack sizes[0] -> ... -> sizes.back(); hidden layers use `hidden`, the last layer is identity.
/// Weights and biases are drawn from U(-1/sqrt(in), 1/sqrt(in)).
MlpParams make_mlp(std::span<const std::size_t> sizes, Activation hidden, std::uint64_t seed,
                   double hidden_dropout = 0.0);

/// Tape-free evaluation. Dropout is active only when a seed is supplied.
Tensor forward(const MlpParams& params, const Tensor& input, std::optional<std::uint64_t> dropout_seed = {});

// ---------------------------------------------------------------------------
// Reverse-mode tape

enum class Op {
  leaf,
  linear,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  neg,
  relu,
  tanh,
  exp,
  log,
  square,
  sum,
  mean,
  minimum,
  clamp,
  concat_cols,
  slice_cols,
  row_sum,
  where_negative,  // asymmetric weighting: a_i * (u_i < 0 ? lo : hi)
  log_softmax,     // row-wise
};

struct Node {
  Op op = Op::leaf;
  int parents[3] = {-1, -1, -1};
  Tensor value;
  double arg0 = 0.0;
  double arg1 = 0.0;
  bool needs_grad = false;
  int param_id = -1;  // >= 0 for trainable leaves
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}

  Tape* tape() const { return tape_; }
  int index() const { return index_; }
  const Tensor& value() const;
  bool needs_grad() const;

 private:
  Tape* tape_ = nullptr;
  int index_ = -1;
};

class Gradients {
 public:
  explicit Gradients(std::vector<Tensor> per_param) : grads_(std::move(per_param)) {}
  /// Gradient for a parameter leaf (zeros if the output does not depend on it).
  const Tensor& of(const Var& parameter) const;
  const std::vector<Tensor>& all() const { return grads_; }

 private:
  std::vector<Tensor> grads_;
  friend class Tape;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Trainable leaf; gradients are returned in registration order.
  Var parameter(Tensor value);

  Var push(Op op, std::initializer_list<Var> parents, Tensor value, double arg0 = 0.0, double arg1 = 0.0);

  const Node& node(int index) const { return nodes_[static_cast<std::size_t>(index)]; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t parameter_count() const { return param_nodes_.size(); }

  /// Reverse accumulation from a one-element node. Throws ContractError otherwise.
  Gradients backward(const Var& output) const;

 private:
  std::vector<Node> nodes_;
  std::vector<int> param_nodes_;
};

Var linear(const Var& x, const Var& weight, const Var& bias);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
Var relu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var minimum(const Var& a, const Var& b);
/// Gradient passes only where lo < a < hi.
Var clamp(const Var& a, double lo, double hi);
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var row_sum(const Var& a);
/// Row-wise x - logsumexp(x).
Var log_softmax(const Var& a);
/// Elementwise a_i * (ref_i < 0 ? weight_negative : weight_positive); `ref` receives no gradient.
Var asymmetric_weight(const Var& a, const Var& ref, double weight_negative, double weight_positive);
/// Copy of the value with no gradient path.
Var detach(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

/// MLP leaves registered on a tape.
struct MlpBinding {
  std::vector<Var> weights;
  std::vector<Var> biases;

  /// Same flat order as MlpParams::tensors().
  std::vector<Tensor> gradients(const Gradients& grads) const;
};

MlpBinding bind(Tape& tape, const MlpParams& params, bool trainable);
Var forward(const MlpParams& params, const MlpBinding& binding, const Var& input,
            std::optional<std::uint64_t> dropout_seed = {});

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  long step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

AdamState make_adam_state(const MlpParams& params);
AdamState make_adam_state(std::span<const Tensor> params);

/// One adaptive-moment update in place. Throws ValidationError naming the first non-finite gradient.
void adam_step(MlpParams& params, std::span<const Tensor> grads, AdamState& state, double learning_rate,
               const AdamConfig& config = {});
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               double learning_rate, const AdamConfig& config = {},
               const std::function<std::string(std::size_t)>& name = {});

// ---------------------------------------------------------------------------
// Finite-difference oracle

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

/// Builds a scalar from parameter leaves on the given tape.
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares reverse-mode gradients to central differences. Relative error uses max(|a|,|b|,1).
GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Tensor>& params, double step = 1e-5,
                           double tolerance = 1e-4);

}  // namespace projiql::nn
