// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

// Dense row-major matrices and the handful of kernels the toolkit needs:
// products, transposes, reductions and a deterministic thin SVD.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "lrsms/error.hpp"

namespace lrsms {

template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match " + shape_string(rows_, cols_));
    }
  }
  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows);

  static BasicMatrix identity(std::size_t n);
  static BasicMatrix diagonal(std::span<const T> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  bool all_finite() const noexcept;
  std::string shape() const { return shape_string(rows_, cols_); }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

  static std::string shape_string(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using MatrixF = BasicMatrix<float>;

enum class Trans : std::uint8_t { no, yes };

// c = alpha * op(a) * op(b) + beta * c. `c` is resized when beta == 0.
template <typename T>
void gemm(T alpha, const BasicMatrix<T>& a, Trans ta, const BasicMatrix<T>& b, Trans tb, T beta,
          BasicMatrix<T>& c);

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b);
// a^T * b
template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b);
// a * b^T
template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a);

template <typename T>
BasicMatrix<T> operator+(const BasicMatrix<T>& a, const BasicMatrix<T>& b);
template <typename T>
BasicMatrix<T> operator-(const BasicMatrix<T>& a, const BasicMatrix<T>& b);
template <typename T>
BasicMatrix<T> operator*(T s, const BasicMatrix<T>& a);

template <typename T>
double frobenius_norm(const BasicMatrix<T>& a);

// Population variance (divides by the entry count) over all entries.
// Throws DomainError for fewer than two entries.
double variance(const Matrix& w);

template <typename To, typename From>
BasicMatrix<To> cast(const BasicMatrix<From>& a) {
  std::vector<To> out(a.size());
  auto src = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(src[i]);
  return BasicMatrix<To>(a.rows(), a.cols(), std::move(out));
}

// Thin SVD: w = u * diag(sigma) * vt with k = min(m, n).
struct SvdResult {
  Matrix u;                   // m x k, orthonormal columns
  std::vector<double> sigma;  // non-increasing, >= 0
  Matrix vt;                  // k x n, orthonormal rows
};

struct SvdOptions {
  int max_sweeps = 60;
  double angle_tolerance = 1e-12;
};

// One-sided (Hestenes) Jacobi with cyclic sweeps over the taller orientation.
// Output is deterministic: the largest-magnitude entry of each left singular
// vector is made non-negative. Throws NumericalError when the sweep cap is hit.
SvdResult svd(const Matrix& w, const SvdOptions& options = {});

// u[:, :r] * diag(sigma[:r]) * vt[:r, :]
Matrix reconstruct(const SvdResult& s, std::size_t r);

}  // namespace lrsms
