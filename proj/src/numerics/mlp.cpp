#include <cmath>

#include "kernels.hpp"
#include "projiql/errors.hpp"
#include "projiql/rng.hpp"

namespace projiql::nn {

namespace detail {

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.cols() != weight.cols()) {
    throw ShapeError("linear: input trailing dimension " + std::to_string(x.cols()) +
                     " does not match weight input dimension " + std::to_string(weight.cols()));
  }
  if (bias.size() != weight.rows()) throw ShapeError("linear: bias length does not match weight rows");
  Tensor y({x.rows(), weight.rows()});
  auto out = as_matrix(y);
  out.noalias() = as_matrix(x) * as_matrix(weight).transpose();
  const Eigen::Map<const Eigen::RowVectorXd> b(bias.data().data(), static_cast<Eigen::Index>(bias.size()));
  out.rowwise() += b;
  return y;
}

void apply_activation(Tensor& t, Activation a) {
  switch (a) {
    case Activation::relu:
      for (double& v : t.data()) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::tanh:
      for (double& v : t.data()) v = std::tanh(v);
      break;
    case Activation::identity:
      break;
  }
}

Tensor dropout_mask(std::size_t rows, std::size_t cols, double rate, std::uint64_t seed, std::size_t layer) {
  Tensor mask({rows, cols});
  StreamRng rng(seed, 0x64726f70ULL + layer);
  const double keep = 1.0 - rate;
  for (double& m : mask.data()) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mask;
}

}  // namespace detail

const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::tanh:
      return "tanh";
    case Activation::identity:
      return "identity";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw ValidationError("unknown activation '" + name + "'");
}

MlpParams::MlpParams(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<Tensor*> MlpParams::tensors() {
  std::vector<Tensor*> out;
  out.reserve(layers_.size() * 2);
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Tensor*> MlpParams::tensors() const {
  std::vector<const Tensor*> out;
  out.reserve(layers_.size() * 2);
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::string MlpParams::tensor_name(std::size_t flat_index) const {
  return "layer " + std::to_string(flat_index / 2) + (flat_index % 2 == 0 ? " weight" : " bias");
}

void MlpParams::validate() const {
  if (layers_.empty()) throw ShapeError("MLP needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weight.shape().size() != 2) throw ShapeError("layer " + std::to_string(i) + " weight must be 2-D");
    if (l.bias.shape().size() != 1 || l.bias.size() != l.out_dim()) {
      throw ShapeError("layer " + std::to_string(i) + " bias must be a vector of length out");
    }
    if (i + 1 < layers_.size() && layers_[i + 1].in_dim() != l.out_dim()) {
      throw ShapeError("layer " + std::to_string(i) + " output " + std::to_string(l.out_dim()) +
                       " does not feed layer input " + std::to_string(layers_[i + 1].in_dim()));
    }
    if (!(l.dropout >= 0.0 && l.dropout < 1.0)) throw ValidationError("dropout rate must lie in [0,1)");
  }
  if (layers_.back().activation != Activation::identity) {
    throw ValidationError("final MLP layer must use the identity activation");
  }
}

MlpParams make_mlp(std::span<const std::size_t> sizes, Activation hidden, std::uint64_t seed,
                   double hidden_dropout) {
  if (sizes.size() < 2) throw ShapeError("make_mlp needs at least input and output sizes");
  std::vector<Layer> layers;
  StreamRng rng(seed, 0x696e6974ULL);
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const std::size_t in = sizes[i];
    const std::size_t out = sizes[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Layer layer;
    layer.weight = Tensor({out, in});
    layer.bias = Tensor({out});
    for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
    for (double& b : layer.bias.data()) b = rng.uniform(-bound, bound);
    const bool last = i + 2 == sizes.size();
    layer.activation = last ? Activation::identity : hidden;
    layer.dropout = last ? 0.0 : hidden_dropout;
    layers.push_back(std::move(layer));
  }
  return MlpParams(std::move(layers));
}

Tensor forward(const MlpParams& params, const Tensor& input, std::optional<std::uint64_t> dropout_seed) {
  if (!input.all_finite()) throw ValidationError("forward: non-finite input");
  if (input.cols() != params.in_dim()) {
    throw ShapeError("forward: input trailing dimension " + std::to_string(input.cols()) + " != " +
                     std::to_string(params.in_dim()));
  }
  Tensor h = input;
  if (h.shape().size() != 2) h = Tensor({h.rows(), h.cols()}, h.values());
  const auto& layers = params.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = detail::linear_forward(h, layers[i].weight, layers[i].bias);
    detail::apply_activation(h, layers[i].activation);
    if (dropout_seed && layers[i].dropout > 0.0) {
      const Tensor mask = detail::dropout_mask(h.rows(), h.cols(), layers[i].dropout, *dropout_seed, i);
      for (std::size_t k = 0; k < h.size(); ++k) h[k] *= mask[k];
    }
  }
  return h;
}

std::vector<Tensor> MlpBinding::gradients(const Gradients& grads) const {
  std::vector<Tensor> out;
  out.reserve(weights.size() * 2);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(grads.of(weights[i]));
    out.push_back(grads.of(biases[i]));
  }
  return out;
}

MlpBinding bind(Tape& tape, const MlpParams& params, bool trainable) {
  MlpBinding b;
  for (const auto& l : params.layers()) {
    b.weights.push_back(trainable ? tape.parameter(l.weight) : tape.constant(l.weight));
    b.biases.push_back(trainable ? tape.parameter(l.bias) : tape.constant(l.bias));
  }
  return b;
}

Var forward(const MlpParams& params, const MlpBinding& binding, const Var& input,
            std::optional<std::uint64_t> dropout_seed) {
  if (!input.value().all_finite()) throw ValidationError("forward: non-finite input");
  Var h = input;
  const auto& layers = params.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = linear(h, binding.weights[i], binding.biases[i]);
    switch (layers[i].activation) {
      case Activation::relu:
        h = relu(h);
        break;
      case Activation::tanh:
        h = tanh(h);
        break;
      case Activation::identity:
        break;
    }
    if (dropout_seed && layers[i].dropout > 0.0) {
      const auto& v = h.value();
      h = mul(h, h.tape()->constant(
                     detail::dropout_mask(v.rows(), v.cols(), layers[i].dropout, *dropout_seed, i)));
    }
  }
  return h;
}

}  // namespace projiql::nn
