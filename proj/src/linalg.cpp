// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrsms/linalg.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace lrsms {

namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const RowMajor<T>> view(const BasicMatrix<T>& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

template <typename T>
Eigen::Map<RowMajor<T>> view(BasicMatrix<T>& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void rotate(double* p, double* q, std::size_t n, double c, double s) {
  for (std::size_t i = 0; i < n; ++i) {
    const double xp = p[i];
    const double xq = q[i];
    p[i] = c * xp - s * xq;
    q[i] = s * xp + c * xq;
  }
}

// Replace row `j` of `basis` (rows are vectors) by a unit vector orthogonal
// to every row listed in `keep`.
void complete_orthonormal(Matrix& basis, std::size_t j, const std::vector<std::size_t>& keep) {
  const std::size_t len = basis.cols();
  std::vector<double> cand(len);
  for (std::size_t e = 0; e < len; ++e) {
    std::fill(cand.begin(), cand.end(), 0.0);
    cand[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k : keep) {
        const double* other = basis.row(k).data();
        const double proj = dot(cand.data(), other, len);
        for (std::size_t i = 0; i < len; ++i) cand[i] -= proj * other[i];
      }
    }
    const double norm = std::sqrt(dot(cand.data(), cand.data(), len));
    if (norm > 0.5) {
      auto row = basis.row(j);
      for (std::size_t i = 0; i < len; ++i) row[i] = cand[i] / norm;
      return;
    }
  }
  throw NumericalError("svd: could not complete orthonormal basis");
}

}  // namespace

template <typename T>
BasicMatrix<T>::BasicMatrix(std::initializer_list<std::initializer_list<T>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

template <typename T>
BasicMatrix<T> BasicMatrix<T>::identity(std::size_t n) {
  BasicMatrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = T(1);
  return out;
}

template <typename T>
BasicMatrix<T> BasicMatrix<T>::diagonal(std::span<const T> values) {
  BasicMatrix out(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out(i, i) = values[i];
  return out;
}

template <typename T>
bool BasicMatrix<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T x) { return std::isfinite(x); });
}

template <typename T>
void gemm(T alpha, const BasicMatrix<T>& a, Trans ta, const BasicMatrix<T>& b, Trans tb, T beta,
          BasicMatrix<T>& c) {
  const std::size_t m = ta == Trans::no ? a.rows() : a.cols();
  const std::size_t ka = ta == Trans::no ? a.cols() : a.rows();
  const std::size_t kb = tb == Trans::no ? b.rows() : b.cols();
  const std::size_t n = tb == Trans::no ? b.cols() : b.rows();
  if (ka != kb) {
    throw ShapeError("gemm: inner dimensions differ: " + a.shape() + (ta == Trans::yes ? "^T" : "") +
                     " * " + b.shape() + (tb == Trans::yes ? "^T" : ""));
  }
  if (beta == T(0)) {
    if (c.rows() != m || c.cols() != n) c = BasicMatrix<T>(m, n);
  } else if (c.rows() != m || c.cols() != n) {
    throw ShapeError("gemm: accumulator " + c.shape() + " does not match " +
                     BasicMatrix<T>::shape_string(m, n));
  }
  if (m == 0 || n == 0) return;
  auto cv = view(c);
  if (ka == 0) {
    if (beta == T(0)) cv.setZero(); else cv *= beta;
    return;
  }
  auto av = view(a);
  auto bv = view(b);
  if (beta == T(0)) {
    cv.setZero();
  } else if (beta != T(1)) {
    cv *= beta;
  }
  if (ta == Trans::no && tb == Trans::no) {
    cv.noalias() += alpha * (av * bv);
  } else if (ta == Trans::yes && tb == Trans::no) {
    cv.noalias() += alpha * (av.transpose() * bv);
  } else if (ta == Trans::no && tb == Trans::yes) {
    cv.noalias() += alpha * (av * bv.transpose());
  } else {
    cv.noalias() += alpha * (av.transpose() * bv.transpose());
  }
}

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape() + " by " + b.shape());
  }
  BasicMatrix<T> c;
  gemm(T(1), a, Trans::no, b, Trans::no, T(0), c);
  return c;
}

template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  BasicMatrix<T> c;
  gemm(T(1), a, Trans::yes, b, Trans::no, T(0), c);
  return c;
}

template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  BasicMatrix<T> c;
  gemm(T(1), a, Trans::no, b, Trans::yes, T(0), c);
  return c;
}

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a) {
  BasicMatrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

template <typename T>
BasicMatrix<T> operator+(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("add: " + a.shape() + " vs " + b.shape());
  }
  BasicMatrix<T> out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return out;
}

template <typename T>
BasicMatrix<T> operator-(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("subtract: " + a.shape() + " vs " + b.shape());
  }
  BasicMatrix<T> out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
  return out;
}

template <typename T>
BasicMatrix<T> operator*(T s, const BasicMatrix<T>& a) {
  BasicMatrix<T> out = a;
  for (auto& x : out.data()) x *= s;
  return out;
}

template <typename T>
double frobenius_norm(const BasicMatrix<T>& a) {
  double s = 0.0;
  for (T x : a.data()) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

double variance(const Matrix& w) {
  if (w.size() < 2) throw DomainError("variance: need at least 2 entries, got " + std::to_string(w.size()));
  // Welford.
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t count = 0;
  for (double x : w.data()) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }
  return m2 / static_cast<double>(count);
}

SvdResult svd(const Matrix& w, const SvdOptions& options) {
  if (w.rows() == 0 || w.cols() == 0) throw DomainError("svd: empty matrix " + w.shape());
  if (!w.all_finite()) throw DomainError("svd: input has non-finite entries");

  const bool transposed = w.rows() < w.cols();
  // Rows of `cols` are the columns of the tall orientation A (len x k).
  Matrix cols = transposed ? w : transpose(w);
  const std::size_t k = cols.rows();
  const std::size_t len = cols.cols();
  Matrix right = Matrix::identity(k);  // rows are right singular vectors of A

  std::vector<double> norms(k);
  double off = 0.0;
  bool converged = false;
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    for (std::size_t j = 0; j < k; ++j) norms[j] = dot(cols.row(j).data(), cols.row(j).data(), len);
    off = 0.0;
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      for (std::size_t q = p + 1; q < k; ++q) {
        const double alpha = norms[p];
        const double beta = norms[q];
        const double gamma = dot(cols.row(p).data(), cols.row(q).data(), len);
        if (gamma == 0.0) continue;
        const double cosine = std::abs(gamma) / std::sqrt(alpha * beta);
        off = std::max(off, cosine);
        if (cosine < options.angle_tolerance) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(cols.row(p).data(), cols.row(q).data(), len, c, s);
        rotate(right.row(p).data(), right.row(q).data(), k, c, s);
        norms[p] = alpha - t * gamma;
        norms[q] = beta + t * gamma;
        rotated = true;
      }
    }
    if (!rotated) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "svd: no convergence after " << options.max_sweeps
        << " sweeps; largest off-diagonal cosine " << off;
    throw NumericalError(msg.str());
  }

  std::vector<double> sigma(k);
  for (std::size_t j = 0; j < k; ++j) sigma[j] = std::sqrt(dot(cols.row(j).data(), cols.row(j).data(), len));
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  // Normalized columns of A, in sorted order (rows of `left`).
  Matrix left(k, len);
  Matrix right_sorted(k, k);
  std::vector<double> sigma_sorted(k);
  std::vector<std::size_t> zero_rows;
  std::vector<std::size_t> good_rows;
  constexpr double kTiny = std::numeric_limits<double>::min() * 1e4;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t src = order[j];
    sigma_sorted[j] = sigma[src];
    std::copy_n(right.row(src).data(), k, right_sorted.row(j).data());
    if (sigma[src] > kTiny) {
      const double* col = cols.row(src).data();
      double* dst = left.row(j).data();
      for (std::size_t i = 0; i < len; ++i) dst[i] = col[i] / sigma[src];
      good_rows.push_back(j);
    } else {
      sigma_sorted[j] = 0.0;
      zero_rows.push_back(j);
    }
  }
  for (std::size_t j : zero_rows) {
    complete_orthonormal(left, j, good_rows);
    good_rows.push_back(j);
  }

  // A = L^T S R  =>  for w = A^T (not transposed): w = R^T S L.
  SvdResult out;
  out.sigma = std::move(sigma_sorted);
  if (transposed) {
    out.u = transpose(right_sorted);  // m x k
    out.vt = std::move(left);         // k x n
  } else {
    out.u = transpose(left);  // m x k
    out.vt = std::move(right_sorted);
  }
  for (std::size_t j = 0; j < k; ++j) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < out.u.rows(); ++i) {
      if (std::abs(out.u(i, j)) > best) {
        best = std::abs(out.u(i, j));
        arg = i;
      }
    }
    if (out.u(arg, j) < 0.0) {
      for (std::size_t i = 0; i < out.u.rows(); ++i) out.u(i, j) = -out.u(i, j);
      for (double& x : out.vt.row(j)) x = -x;
    }
  }
  return out;
}

Matrix reconstruct(const SvdResult& s, std::size_t r) {
  const std::size_t k = s.sigma.size();
  if (r > k) throw DomainError("reconstruct: rank " + std::to_string(r) + " exceeds " + std::to_string(k));
  Matrix us(s.u.rows(), r);
  for (std::size_t i = 0; i < us.rows(); ++i) {
    for (std::size_t j = 0; j < r; ++j) us(i, j) = s.u(i, j) * s.sigma[j];
  }
  Matrix vt(r, s.vt.cols());
  for (std::size_t j = 0; j < r; ++j) std::copy_n(s.vt.row(j).data(), s.vt.cols(), vt.row(j).data());
  return matmul(us, vt);
}

#define LRSMS_INSTANTIATE(T)                                                                     \
  template class BasicMatrix<T>;                                                                 \
  template void gemm<T>(T, const BasicMatrix<T>&, Trans, const BasicMatrix<T>&, Trans, T,        \
                        BasicMatrix<T>&);                                                        \
  template BasicMatrix<T> matmul<T>(const BasicMatrix<T>&, const BasicMatrix<T>&);               \
  template BasicMatrix<T> matmul_tn<T>(const BasicMatrix<T>&, const BasicMatrix<T>&);            \
  template BasicMatrix<T> matmul_nt<T>(const BasicMatrix<T>&, const BasicMatrix<T>&);            \
  template BasicMatrix<T> transpose<T>(const BasicMatrix<T>&);                                   \
  template BasicMatrix<T> operator+ <T>(const BasicMatrix<T>&, const BasicMatrix<T>&);           \
  template BasicMatrix<T> operator- <T>(const BasicMatrix<T>&, const BasicMatrix<T>&);           \
  template BasicMatrix<T> operator* <T>(T, const BasicMatrix<T>&);                               \
  template double frobenius_norm<T>(const BasicMatrix<T>&);

LRSMS_INSTANTIATE(float)
LRSMS_INSTANTIATE(double)

#undef LRSMS_INSTANTIATE

}  // namespace lrsms
