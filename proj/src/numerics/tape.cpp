#include <algorithm>
#include <cmath>

#include "kernels.hpp"
#include "projiql/errors.hpp"

namespace projiql::nn {

namespace {

Tape& tape_of(const Var& v) {
  if (v.tape() == nullptr) throw ContractError("variable is not attached to a tape");
  return *v.tape();
}

Tape& common_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ContractError("variables live on different tapes");
  return tape_of(a);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape " + a.shape_string() + " vs " + b.shape_string());
  }
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out = a;
  for (double& x : out.data()) x = f(x);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

void accumulate(std::vector<Tensor>& grads, const Tape& tape, int index, const Tensor& g) {
  if (index < 0 || !tape.node(index).needs_grad) return;
  auto& slot = grads[static_cast<std::size_t>(index)];
  if (slot.size() == 0) {
    slot = g;
    return;
  }
  for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
}

}  // namespace

const Tensor& Var::value() const { return tape_of(*this).node(index_).value; }
bool Var::needs_grad() const { return tape_of(*this).node(index_).needs_grad; }

const Tensor& Gradients::of(const Var& parameter) const {
  const int id = parameter.tape()->node(parameter.index()).param_id;
  if (id < 0) throw ContractError("gradient requested for a non-parameter node");
  return grads_[static_cast<std::size_t>(id)];
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  n.param_id = static_cast<int>(param_nodes_.size());
  nodes_.push_back(std::move(n));
  const int index = static_cast<int>(nodes_.size() - 1);
  param_nodes_.push_back(index);
  return Var(this, index);
}

Var Tape::push(Op op, std::initializer_list<Var> parents, Tensor value, double arg0, double arg1) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.arg0 = arg0;
  n.arg1 = arg1;
  int k = 0;
  for (const auto& p : parents) {
    if (p.tape() != this) throw ContractError("parent variable belongs to another tape");
    n.parents[k++] = p.index();
    n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(p.index())].needs_grad;
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Gradients Tape::backward(const Var& output) const {
  if (output.tape() != this) throw ContractError("backward: output belongs to another tape");
  const auto& out_node = node(output.index());
  if (out_node.value.size() != 1) {
    throw ContractError("backward requires a scalar output, got shape " + out_node.value.shape_string());
  }
  std::vector<Tensor> grads(nodes_.size());
  if (out_node.needs_grad) grads[static_cast<std::size_t>(output.index())] = Tensor(out_node.value.shape(), 1.0);

  for (int i = output.index(); i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    Tensor& g = grads[static_cast<std::size_t>(i)];
    if (!n.needs_grad || g.size() == 0 || n.op == Op::leaf) continue;
    const int p0 = n.parents[0];
    const int p1 = n.parents[1];
    const int p2 = n.parents[2];
    auto parent_value = [&](int p) -> const Tensor& { return nodes_[static_cast<std::size_t>(p)].value; };
    auto wants = [&](int p) { return p >= 0 && nodes_[static_cast<std::size_t>(p)].needs_grad; };

    switch (n.op) {
      case Op::leaf:
        break;
      case Op::linear: {
        const Tensor& x = parent_value(p0);
        const Tensor& w = parent_value(p1);
        const auto gy = detail::as_matrix(g);
        if (wants(p0)) {
          Tensor gx(x.shape());
          detail::as_matrix(gx).noalias() = gy * detail::as_matrix(w);
          accumulate(grads, *this, p0, gx);
        }
        if (wants(p1)) {
          Tensor gw(w.shape());
          detail::as_matrix(gw).noalias() = gy.transpose() * detail::as_matrix(x);
          accumulate(grads, *this, p1, gw);
        }
        if (wants(p2)) {
          Tensor gb(parent_value(p2).shape());
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g.at(r, c);
          }
          accumulate(grads, *this, p2, gb);
        }
        break;
      }
      case Op::add:
        accumulate(grads, *this, p0, g);
        accumulate(grads, *this, p1, g);
        break;
      case Op::sub:
        accumulate(grads, *this, p0, g);
        if (wants(p1)) accumulate(grads, *this, p1, map(g, [](double v) { return -v; }));
        break;
      case Op::mul:
        if (wants(p0)) accumulate(grads, *this, p0, zip(g, parent_value(p1), std::multiplies<>()));
        if (wants(p1)) accumulate(grads, *this, p1, zip(g, parent_value(p0), std::multiplies<>()));
        break;
      case Op::scale: {
        const double c = n.arg0;
        accumulate(grads, *this, p0, map(g, [c](double v) { return v * c; }));
        break;
      }
      case Op::add_scalar:
        accumulate(grads, *this, p0, g);
        break;
      case Op::neg:
        accumulate(grads, *this, p0, map(g, [](double v) { return -v; }));
        break;
      case Op::relu:
        accumulate(grads, *this, p0, zip(g, parent_value(p0), [](double gv, double x) { return x > 0.0 ? gv : 0.0; }));
        break;
      case Op::tanh:
        accumulate(grads, *this, p0, zip(g, n.value, [](double gv, double y) { return gv * (1.0 - y * y); }));
        break;
      case Op::exp:
        accumulate(grads, *this, p0, zip(g, n.value, std::multiplies<>()));
        break;
      case Op::log:
        accumulate(grads, *this, p0, zip(g, parent_value(p0), [](double gv, double x) { return gv / x; }));
        break;
      case Op::square:
        accumulate(grads, *this, p0, zip(g, parent_value(p0), [](double gv, double x) { return 2.0 * x * gv; }));
        break;
      case Op::sum: {
        const double gv = g[0];
        accumulate(grads, *this, p0, Tensor(parent_value(p0).shape(), gv));
        break;
      }
      case Op::mean: {
        const auto& x = parent_value(p0);
        accumulate(grads, *this, p0, Tensor(x.shape(), g[0] / static_cast<double>(x.size())));
        break;
      }
      case Op::minimum: {
        const auto& a = parent_value(p0);
        const auto& b = parent_value(p1);
        if (wants(p0)) {
          Tensor ga = g;
          for (std::size_t k = 0; k < ga.size(); ++k) ga[k] = a[k] <= b[k] ? g[k] : 0.0;
          accumulate(grads, *this, p0, ga);
        }
        if (wants(p1)) {
          Tensor gb = g;
          for (std::size_t k = 0; k < gb.size(); ++k) gb[k] = a[k] <= b[k] ? 0.0 : g[k];
          accumulate(grads, *this, p1, gb);
        }
        break;
      }
      case Op::clamp: {
        const double lo = n.arg0;
        const double hi = n.arg1;
        accumulate(grads, *this, p0,
                   zip(g, parent_value(p0), [lo, hi](double gv, double x) { return x > lo && x < hi ? gv : 0.0; }));
        break;
      }
      case Op::concat_cols: {
        const auto& a = parent_value(p0);
        const auto& b = parent_value(p1);
        Tensor ga(a.shape());
        Tensor gb(b.shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < a.cols(); ++c) ga.at(r, c) = g.at(r, c);
          for (std::size_t c = 0; c < b.cols(); ++c) gb.at(r, c) = g.at(r, a.cols() + c);
        }
        accumulate(grads, *this, p0, ga);
        accumulate(grads, *this, p1, gb);
        break;
      }
      case Op::slice_cols: {
        const auto& a = parent_value(p0);
        const auto begin = static_cast<std::size_t>(n.arg0);
        Tensor ga(a.shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) ga.at(r, begin + c) = g.at(r, c);
        }
        accumulate(grads, *this, p0, ga);
        break;
      }
      case Op::row_sum: {
        const auto& a = parent_value(p0);
        Tensor ga(a.shape());
        for (std::size_t r = 0; r < a.rows(); ++r) {
          for (std::size_t c = 0; c < a.cols(); ++c) ga.at(r, c) = g[r];
        }
        accumulate(grads, *this, p0, ga);
        break;
      }
      case Op::where_negative: {
        const auto& ref = parent_value(p1);
        const double wn = n.arg0;
        const double wp = n.arg1;
        accumulate(grads, *this, p0, zip(g, ref, [wn, wp](double gv, double r) { return gv * (r < 0.0 ? wn : wp); }));
        break;
      }
      case Op::log_softmax: {
        Tensor ga(g.shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double total = 0.0;
          for (std::size_t c = 0; c < g.cols(); ++c) total += g.at(r, c);
          for (std::size_t c = 0; c < g.cols(); ++c) ga.at(r, c) = g.at(r, c) - std::exp(n.value.at(r, c)) * total;
        }
        accumulate(grads, *this, p0, ga);
        break;
      }
    }
  }

  std::vector<Tensor> per_param;
  per_param.reserve(param_nodes_.size());
  for (int idx : param_nodes_) {
    const auto& slot = grads[static_cast<std::size_t>(idx)];
    per_param.push_back(slot.size() == 0 ? Tensor(nodes_[static_cast<std::size_t>(idx)].value.shape()) : slot);
  }
  return Gradients(std::move(per_param));
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  Tape& t = common_tape(x, weight);
  return t.push(Op::linear, {x, weight, bias}, detail::linear_forward(x.value(), weight.value(), bias.value()));
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a.value(), b.value());
  return common_tape(a, b).push(Op::add, {a, b}, zip(a.value(), b.value(), std::plus<>()));
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a.value(), b.value());
  return common_tape(a, b).push(Op::sub, {a, b}, zip(a.value(), b.value(), std::minus<>()));
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a.value(), b.value());
  return common_tape(a, b).push(Op::mul, {a, b}, zip(a.value(), b.value(), std::multiplies<>()));
}

Var scale(const Var& a, double c) {
  return tape_of(a).push(Op::scale, {a}, map(a.value(), [c](double x) { return x * c; }), c);
}

Var add_scalar(const Var& a, double c) {
  return tape_of(a).push(Op::add_scalar, {a}, map(a.value(), [c](double x) { return x + c; }), c);
}

Var neg(const Var& a) { return tape_of(a).push(Op::neg, {a}, map(a.value(), [](double x) { return -x; })); }

Var relu(const Var& a) {
  return tape_of(a).push(Op::relu, {a}, map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }));
}

Var tanh(const Var& a) {
  return tape_of(a).push(Op::tanh, {a}, map(a.value(), [](double x) { return std::tanh(x); }));
}

Var exp(const Var& a) {
  return tape_of(a).push(Op::exp, {a}, map(a.value(), [](double x) { return std::exp(x); }));
}

Var log(const Var& a) {
  return tape_of(a).push(Op::log, {a}, map(a.value(), [](double x) { return std::log(x); }));
}

Var square(const Var& a) {
  return tape_of(a).push(Op::square, {a}, map(a.value(), [](double x) { return x * x; }));
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return tape_of(a).push(Op::sum, {a}, Tensor::scalar(s));
}

Var mean(const Var& a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return tape_of(a).push(Op::mean, {a}, Tensor::scalar(s / static_cast<double>(a.value().size())));
}

Var minimum(const Var& a, const Var& b) {
  require_same_shape("minimum", a.value(), b.value());
  return common_tape(a, b).push(Op::minimum, {a, b},
                                zip(a.value(), b.value(), [](double x, double y) { return x <= y ? x : y; }));
}

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo <= hi)) throw ValidationError("clamp: lo must not exceed hi");
  return tape_of(a).push(Op::clamp, {a}, map(a.value(), [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); }),
                         lo, hi);
}

Var concat_cols(const Var& a, const Var& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row counts differ");
  Tensor out({av.rows(), av.cols() + bv.cols()});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(r, c) = av.at(r, c);
    for (std::size_t c = 0; c < bv.cols(); ++c) out.at(r, av.cols() + c) = bv.at(r, c);
  }
  return common_tape(a, b).push(Op::concat_cols, {a, b}, std::move(out));
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const auto& av = a.value();
  if (begin >= end || end > av.cols()) throw ShapeError("slice_cols: bad column range");
  Tensor out({av.rows(), end - begin});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = begin; c < end; ++c) out.at(r, c - begin) = av.at(r, c);
  }
  return tape_of(a).push(Op::slice_cols, {a}, std::move(out), static_cast<double>(begin), static_cast<double>(end));
}

Var row_sum(const Var& a) {
  const auto& av = a.value();
  Tensor out({av.rows(), 1});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) s += av.at(r, c);
    out[r] = s;
  }
  return tape_of(a).push(Op::row_sum, {a}, std::move(out));
}

Var log_softmax(const Var& a) {
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double m = out.at(r, 0);
    for (std::size_t c = 1; c < out.cols(); ++c) m = std::max(m, out.at(r, c));
    double total = 0.0;
    for (std::size_t c = 0; c < out.cols(); ++c) total += std::exp(out.at(r, c) - m);
    const double lse = m + std::log(total);
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) -= lse;
  }
  return tape_of(a).push(Op::log_softmax, {a}, std::move(out));
}

Var asymmetric_weight(const Var& a, const Var& ref, double weight_negative, double weight_positive) {
  require_same_shape("asymmetric_weight", a.value(), ref.value());
  Tape& t = common_tape(a, ref);
  Tensor out = a.value();
  const auto& r = ref.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= r[i] < 0.0 ? weight_negative : weight_positive;
  // ref is recorded as a constant copy so no gradient reaches it.
  const Var ref_const = t.constant(r);
  return t.push(Op::where_negative, {a, ref_const}, std::move(out), weight_negative, weight_positive);
}

Var detach(const Var& a) { return tape_of(a).constant(a.value()); }

}  // namespace projiql::nn
