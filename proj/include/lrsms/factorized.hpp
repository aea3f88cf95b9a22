// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

// Full-rank and low-rank linear layers.
//
// A factorized layer stores W ~= U V^T with U (m x r) and V (n x r) and
// applies it as U (V^T x), so neither storage nor compute ever touches the
// m x n product. Inputs and outputs are column batches: x is n x batch.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lrsms/linalg.hpp"
#include "lrsms/random.hpp"

namespace lrsms {

template <typename T>
struct DenseLinear {
  BasicMatrix<T> w;  // m x n
  std::optional<std::vector<T>> bias;

  std::size_t out_dim() const noexcept { return w.rows(); }
  std::size_t in_dim() const noexcept { return w.cols(); }
};

template <typename T>
class FactorizedLinear {
 public:
  FactorizedLinear() = default;
  // Throws ShapeError unless u is m x r, v is n x r and r <= min(m, n).
  FactorizedLinear(BasicMatrix<T> u, BasicMatrix<T> v, std::optional<std::vector<T>> bias = std::nullopt);

  std::size_t out_dim() const noexcept { return u_.rows(); }
  std::size_t in_dim() const noexcept { return v_.rows(); }
  std::size_t rank() const noexcept { return u_.cols(); }

  const BasicMatrix<T>& u() const noexcept { return u_; }
  const BasicMatrix<T>& v() const noexcept { return v_; }
  BasicMatrix<T>& u() noexcept { return u_; }
  BasicMatrix<T>& v() noexcept { return v_; }
  const std::optional<std::vector<T>>& bias() const noexcept { return bias_; }
  std::optional<std::vector<T>>& bias() noexcept { return bias_; }

  // u * v^T. Only for analysis and tests; never on the forward path.
  BasicMatrix<T> materialize() const { return matmul_nt(u_, v_); }

 private:
  BasicMatrix<T> u_;
  BasicMatrix<T> v_;
  std::optional<std::vector<T>> bias_;
};

template <typename T>
struct LayerGrads {
  BasicMatrix<T> grad_u;  // m x r
  BasicMatrix<T> grad_v;  // n x r
  std::optional<std::vector<T>> grad_bias;
  BasicMatrix<T> grad_input;  // n x batch
};

template <typename T>
struct DenseGrads {
  BasicMatrix<T> grad_w;
  std::optional<std::vector<T>> grad_bias;
  BasicMatrix<T> grad_input;
};

// He (Kaiming) uniform fan-in initialization: U(-sqrt(6/n), sqrt(6/n)).
Matrix kaiming_uniform(std::size_t m, std::size_t n, Rng& rng);

// U = U_r sqrt(S_r), V^T = sqrt(S_r) V_r^T from the SVD of w. The product
// u v^T is the best rank-r approximation of w. Bias starts at zero when
// requested.
FactorizedLinear<double> spectral_init(const Matrix& w, std::size_t rank, bool with_bias = false);

template <typename To, typename From>
FactorizedLinear<To> cast_layer(const FactorizedLinear<From>& layer) {
  std::optional<std::vector<To>> bias;
  if (layer.bias()) bias.emplace(layer.bias()->begin(), layer.bias()->end());
  return FactorizedLinear<To>(cast<To>(layer.u()), cast<To>(layer.v()), std::move(bias));
}

template <typename To, typename From>
DenseLinear<To> cast_layer(const DenseLinear<From>& layer) {
  std::optional<std::vector<To>> bias;
  if (layer.bias) bias.emplace(layer.bias->begin(), layer.bias->end());
  return DenseLinear<To>{cast<To>(layer.w), std::move(bias)};
}

// u (v^T x) + bias.
template <typename T>
BasicMatrix<T> forward(const FactorizedLinear<T>& layer, const BasicMatrix<T>& x);
template <typename T>
BasicMatrix<T> forward(const DenseLinear<T>& layer, const BasicMatrix<T>& x);

template <typename T>
LayerGrads<T> backward(const FactorizedLinear<T>& layer, const BasicMatrix<T>& x, const BasicMatrix<T>& grad_out);
template <typename T>
DenseGrads<T> backward(const DenseLinear<T>& layer, const BasicMatrix<T>& x, const BasicMatrix<T>& grad_out);

// Weight parameters only; biases are not counted.
template <typename T>
std::uint64_t param_count(const FactorizedLinear<T>& layer) {
  return static_cast<std::uint64_t>(layer.rank()) * (layer.out_dim() + layer.in_dim());
}
template <typename T>
std::uint64_t param_count(const DenseLinear<T>& layer) {
  return static_cast<std::uint64_t>(layer.out_dim()) * layer.in_dim();
}

// Forward flops with a multiply-add counted as 2.
template <typename T>
std::uint64_t flop_count(const FactorizedLinear<T>& layer, std::size_t batch) {
  return 2 * param_count(layer) * batch;
}
template <typename T>
std::uint64_t flop_count(const DenseLinear<T>& layer, std::size_t batch) {
  return 2 * param_count(layer) * batch;
}

inline std::uint64_t factorized_param_count(std::size_t m, std::size_t n, std::size_t rank) {
  return static_cast<std::uint64_t>(rank) * (m + n);
}
inline std::uint64_t dense_param_count(std::size_t m, std::size_t n) {
  return static_cast<std::uint64_t>(m) * n;
}

}  // namespace lrsms
