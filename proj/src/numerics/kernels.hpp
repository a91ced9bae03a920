#pragma once

// Internal dense kernels shared by the tape and the tape-free forward pass so
// both paths produce bit-identical values.

#include <Eigen/Core>

#include "projiql/numerics.hpp"

namespace projiql::nn::detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

inline ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline Map as_matrix(Tensor& t) {
  return Map(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

/// y = x W^T + b for x: n x in, W: out x in, b: out.
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
void apply_activation(Tensor& t, Activation a);
Tensor dropout_mask(std::size_t rows, std::size_t cols, double rate, std::uint64_t seed, std::size_t layer);

}  // namespace projiql::nn::detail
