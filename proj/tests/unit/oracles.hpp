// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

// Reference implementations the tests compare against. Nothing here calls
// into the code under test except plain matrix storage.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "lrsms/linalg.hpp"
#include "lrsms/random.hpp"

namespace oracle {

using lrsms::Matrix;

inline Matrix gaussian(std::size_t m, std::size_t n, lrsms::Rng& rng, double scale = 1.0) {
  Matrix a(m, n);
  for (double& x : a.data()) x = scale * rng.normal();
  return a;
}

inline Matrix uniform(std::size_t m, std::size_t n, lrsms::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix a(m, n);
  for (double& x : a.data()) x = rng.uniform(lo, hi);
  return a;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

inline double fro(const Matrix& a) {
  double s = 0.0;
  for (double x : a.data()) s += x * x;
  return std::sqrt(s);
}

inline double fro_diff(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline Eigen::MatrixXd to_eigen(const Matrix& a) {
  Eigen::MatrixXd e(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) e(i, j) = a(i, j);
  }
  return e;
}

// Singular values as square roots of the eigenvalues of the smaller Gram
// matrix, descending.
inline std::vector<double> gram_sigma(const Matrix& a) {
  const Eigen::MatrixXd e = to_eigen(a);
  const Eigen::MatrixXd g = a.rows() >= a.cols() ? Eigen::MatrixXd(e.transpose() * e) : Eigen::MatrixXd(e * e.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
  std::vector<double> s;
  for (Eigen::Index i = es.eigenvalues().size() - 1; i >= 0; --i) s.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(i))));
  return s;
}

// Best rank-r approximation assembled from the factors of a full SVD.
inline Matrix trunc_svd(const lrsms::SvdResult& s, std::size_t r) {
  const std::size_t m = s.u.rows();
  const std::size_t n = s.vt.cols();
  Matrix out(m, n);
  for (std::size_t k = 0; k < r; ++k) {
    for (std::size_t i = 0; i < m; ++i) {
      const double a = s.u(i, k) * s.sigma[k];
      for (std::size_t j = 0; j < n; ++j) out(i, j) += a * s.vt(k, j);
    }
  }
  return out;
}

// Random matrix with orthonormal columns (m >= n) via Gram-Schmidt.
inline Matrix orthonormal(std::size_t m, std::size_t n, lrsms::Rng& rng) {
  Matrix q = gaussian(m, n, rng);
  for (std::size_t j = 0; j < n; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double d = 0.0;
        for (std::size_t i = 0; i < m; ++i) d += q(i, j) * q(i, k);
        for (std::size_t i = 0; i < m; ++i) q(i, j) -= d * q(i, k);
      }
    }
    double nrm = 0.0;
    for (std::size_t i = 0; i < m; ++i) nrm += q(i, j) * q(i, j);
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < m; ++i) q(i, j) /= nrm;
  }
  return q;
}

// Two-pass population variance.
inline double variance(const Matrix& a) {
  double mean = 0.0;
  for (double x : a.data()) mean += x;
  mean /= static_cast<double>(a.size());
  double s = 0.0;
  for (double x : a.data()) s += (x - mean) * (x - mean);
  return s / static_cast<double>(a.size());
}

inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

}  // namespace oracle
