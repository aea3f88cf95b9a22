// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrsms/factorized.hpp"

#include <cmath>

namespace lrsms {

namespace {

template <typename T>
void check_input(std::size_t in_dim, const BasicMatrix<T>& x, const char* who) {
  if (x.rows() != in_dim) {
    throw ShapeError(std::string(who) + ": input " + x.shape() + " needs " + std::to_string(in_dim) + " rows");
  }
}

template <typename T>
void add_bias(const std::optional<std::vector<T>>& bias, BasicMatrix<T>& z) {
  if (!bias) return;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const T b = (*bias)[i];
    for (T& x : z.row(i)) x += b;
  }
}

template <typename T>
std::vector<T> row_sums(const BasicMatrix<T>& g) {
  std::vector<T> out(g.rows(), T(0));
  for (std::size_t i = 0; i < g.rows(); ++i) {
    T s = T(0);
    for (T x : g.row(i)) s += x;
    out[i] = s;
  }
  return out;
}

template <typename T>
void check_grad_out(std::size_t out_dim, const BasicMatrix<T>& x, const BasicMatrix<T>& grad_out) {
  if (grad_out.rows() != out_dim || grad_out.cols() != x.cols()) {
    throw ShapeError("backward: grad_out " + grad_out.shape() + " does not match output " +
                     BasicMatrix<T>::shape_string(out_dim, x.cols()));
  }
}

}  // namespace

template <typename T>
FactorizedLinear<T>::FactorizedLinear(BasicMatrix<T> u, BasicMatrix<T> v, std::optional<std::vector<T>> bias)
    : u_(std::move(u)), v_(std::move(v)), bias_(std::move(bias)) {
  if (u_.cols() != v_.cols() || u_.cols() == 0) {
    throw ShapeError("factorized layer: u " + u_.shape() + " and v " + v_.shape() + " need equal positive rank");
  }
  if (u_.cols() > std::min(u_.rows(), v_.rows())) {
    throw ShapeError("factorized layer: rank " + std::to_string(u_.cols()) + " exceeds min" +
                     BasicMatrix<T>::shape_string(u_.rows(), v_.rows()));
  }
  if (bias_ && bias_->size() != u_.rows()) {
    throw ShapeError("factorized layer: bias length " + std::to_string(bias_->size()) + " != " +
                     std::to_string(u_.rows()));
  }
}

Matrix kaiming_uniform(std::size_t m, std::size_t n, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(n));
  Matrix w(m, n);
  for (double& x : w.data()) x = rng.uniform(-bound, bound);
  return w;
}

FactorizedLinear<double> spectral_init(const Matrix& w, std::size_t rank, bool with_bias) {
  const std::size_t k = std::min(w.rows(), w.cols());
  if (rank < 1 || rank > k) {
    throw DomainError("spectral_init: rank " + std::to_string(rank) + " outside [1, " + std::to_string(k) + "]");
  }
  const SvdResult s = svd(w);
  Matrix u(w.rows(), rank);
  Matrix v(w.cols(), rank);
  for (std::size_t j = 0; j < rank; ++j) {
    const double root = std::sqrt(s.sigma[j]);
    for (std::size_t i = 0; i < w.rows(); ++i) u(i, j) = s.u(i, j) * root;
    for (std::size_t i = 0; i < w.cols(); ++i) v(i, j) = s.vt(j, i) * root;
  }
  std::optional<std::vector<double>> bias;
  if (with_bias) bias.emplace(w.rows(), 0.0);
  return FactorizedLinear<double>(std::move(u), std::move(v), std::move(bias));
}

template <typename T>
BasicMatrix<T> forward(const FactorizedLinear<T>& layer, const BasicMatrix<T>& x) {
  check_input(layer.in_dim(), x, "factorized forward");
  BasicMatrix<T> h;
  gemm(T(1), layer.v(), Trans::yes, x, Trans::no, T(0), h);  // r x batch
  BasicMatrix<T> z;
  gemm(T(1), layer.u(), Trans::no, h, Trans::no, T(0), z);  // m x batch
  add_bias(layer.bias(), z);
  return z;
}

template <typename T>
BasicMatrix<T> forward(const DenseLinear<T>& layer, const BasicMatrix<T>& x) {
  check_input(layer.in_dim(), x, "dense forward");
  BasicMatrix<T> z = matmul(layer.w, x);
  add_bias(layer.bias, z);
  return z;
}

template <typename T>
LayerGrads<T> backward(const FactorizedLinear<T>& layer, const BasicMatrix<T>& x, const BasicMatrix<T>& grad_out) {
  check_input(layer.in_dim(), x, "factorized backward");
  check_grad_out(layer.out_dim(), x, grad_out);
  LayerGrads<T> g;
  BasicMatrix<T> h;
  gemm(T(1), layer.v(), Trans::yes, x, Trans::no, T(0), h);  // v^T x
  gemm(T(1), grad_out, Trans::no, h, Trans::yes, T(0), g.grad_u);
  BasicMatrix<T> gh;
  gemm(T(1), layer.u(), Trans::yes, grad_out, Trans::no, T(0), gh);  // u^T dz
  gemm(T(1), x, Trans::no, gh, Trans::yes, T(0), g.grad_v);
  gemm(T(1), layer.v(), Trans::no, gh, Trans::no, T(0), g.grad_input);
  if (layer.bias()) g.grad_bias = row_sums(grad_out);
  return g;
}

template <typename T>
DenseGrads<T> backward(const DenseLinear<T>& layer, const BasicMatrix<T>& x, const BasicMatrix<T>& grad_out) {
  check_input(layer.in_dim(), x, "dense backward");
  check_grad_out(layer.out_dim(), x, grad_out);
  DenseGrads<T> g;
  gemm(T(1), grad_out, Trans::no, x, Trans::yes, T(0), g.grad_w);
  gemm(T(1), layer.w, Trans::yes, grad_out, Trans::no, T(0), g.grad_input);
  if (layer.bias) g.grad_bias = row_sums(grad_out);
  return g;
}

#define LRSMS_INSTANTIATE(T)                                                                         \
  template class FactorizedLinear<T>;                                                                \
  template BasicMatrix<T> forward<T>(const FactorizedLinear<T>&, const BasicMatrix<T>&);             \
  template BasicMatrix<T> forward<T>(const DenseLinear<T>&, const BasicMatrix<T>&);                  \
  template LayerGrads<T> backward<T>(const FactorizedLinear<T>&, const BasicMatrix<T>&,              \
                                     const BasicMatrix<T>&);                                         \
  template DenseGrads<T> backward<T>(const DenseLinear<T>&, const BasicMatrix<T>&, const BasicMatrix<T>&);

LRSMS_INSTANTIATE(float)
LRSMS_INSTANTIATE(double)

#undef LRSMS_INSTANTIATE

}  // namespace lrsms
