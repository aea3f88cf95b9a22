// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <numeric>

#include "lrsms/linalg.hpp"
#include "oracles.hpp"

using lrsms::Matrix;
using lrsms::Rng;

TEST_SUITE("linalg") {
  TEST_CASE("identity times matrix") {
    const Matrix m{{1, 2, 3}, {4, 5, 6}, {7, 8, 10}};
    CHECK(lrsms::matmul(Matrix::identity(3), m) == m);
  }

  TEST_CASE("2x2 hand product") {
    const Matrix c = lrsms::matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{5}, {6}});
    CHECK(c == Matrix{{17}, {39}});
  }

  TEST_CASE("matmul agrees with the triple loop") {
    Rng rng(11);
    const Matrix a = oracle::gaussian(7, 5, rng);
    const Matrix b = oracle::gaussian(5, 3, rng);
    CHECK(oracle::max_abs_diff(lrsms::matmul(a, b), oracle::matmul(a, b)) < 1e-12);
  }

  TEST_CASE("transposed products and gemm scaling") {
    Rng rng(12);
    const Matrix a = oracle::gaussian(6, 4, rng);
    const Matrix b = oracle::gaussian(6, 5, rng);
    const Matrix c = oracle::gaussian(4, 5, rng);
    CHECK(oracle::max_abs_diff(lrsms::matmul_tn(a, b), oracle::matmul(oracle::transpose(a), b)) < 1e-12);
    CHECK(oracle::max_abs_diff(lrsms::matmul_nt(c, b), oracle::matmul(c, oracle::transpose(b))) < 1e-12);

    Matrix out = c;
    lrsms::gemm(2.0, a, lrsms::Trans::yes, b, lrsms::Trans::no, -1.0, out);
    Matrix want = oracle::matmul(oracle::transpose(a), b);
    for (std::size_t i = 0; i < want.size(); ++i) want.data()[i] = 2.0 * want.data()[i] - c.data()[i];
    CHECK(oracle::max_abs_diff(out, want) < 1e-12);
  }

  TEST_CASE("shape errors name both shapes") {
    try {
      (void)lrsms::matmul(Matrix(2, 3), Matrix(4, 5));
      FAIL("expected ShapeError");
    } catch (const lrsms::ShapeError& e) {
      const std::string what = e.what();
      CHECK(what.find("(2x3)") != std::string::npos);
      CHECK(what.find("(4x5)") != std::string::npos);
    }
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>(3)), lrsms::ShapeError);
  }

  TEST_CASE("matmul is associative") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t m = 1 + rng.below(9), k = 1 + rng.below(9), l = 1 + rng.below(9), n = 1 + rng.below(9);
      const Matrix a = oracle::gaussian(m, k, rng), b = oracle::gaussian(k, l, rng), c = oracle::gaussian(l, n, rng);
      const Matrix left = lrsms::matmul(lrsms::matmul(a, b), c);
      const Matrix right = lrsms::matmul(a, lrsms::matmul(b, c));
      CHECK(oracle::fro_diff(left, right) / oracle::fro(left) < 1e-9);
    }
  }

  TEST_CASE("variance") {
    CHECK(lrsms::variance(Matrix(3, 4, 2.5)) == doctest::Approx(0.0));
    CHECK(lrsms::variance(Matrix{{1, -1}, {1, -1}}) == doctest::Approx(1.0));
    Rng rng(14);
    const Matrix w = oracle::uniform(100, 100, rng, 3.0, 5.0);
    CHECK(std::abs(lrsms::variance(w) - oracle::variance(w)) < 1e-12);
    CHECK_THROWS_AS(lrsms::variance(Matrix(1, 1, 3.0)), lrsms::DomainError);
  }

  TEST_CASE("svd of a diagonal matrix") {
    const std::vector<double> d{3, 2, 1};
    const auto s = lrsms::svd(Matrix::diagonal(d));
    CHECK(s.sigma == std::vector<double>{3, 2, 1});
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(std::abs(std::abs(s.u(i, j)) - (i == j ? 1.0 : 0.0)) < 1e-14);
        CHECK(std::abs(std::abs(s.vt(i, j)) - (i == j ? 1.0 : 0.0)) < 1e-14);
      }
    }
  }

  TEST_CASE("svd of a zero matrix") {
    const auto s = lrsms::svd(Matrix(4, 6));
    CHECK(s.sigma == std::vector<double>(4, 0.0));
    // Factors are still orthonormal.
    CHECK(oracle::max_abs_diff(lrsms::matmul_tn(s.u, s.u), Matrix::identity(4)) < 1e-12);
    CHECK(oracle::max_abs_diff(lrsms::matmul_nt(s.vt, s.vt), Matrix::identity(4)) < 1e-12);
  }

  TEST_CASE("svd sigma matches the Gram eigen oracle") {
    Rng rng(15);
    const Matrix w = oracle::gaussian(12, 8, rng);
    const auto s = lrsms::svd(w);
    const auto want = oracle::gram_sigma(w);
    REQUIRE(s.sigma.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(s.sigma[i] - want[i]) < 1e-8);
  }

  TEST_CASE("svd invariants on mixed shapes") {
    Rng rng(16);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t m = 1 + rng.below(24);
      const std::size_t n = 1 + rng.below(24);
      Matrix w = oracle::gaussian(m, n, rng);
      if (trial % 4 == 3 && std::min(m, n) > 1) {
        // rank-deficient: product of thin factors
        const std::size_t r = 1 + rng.below(std::min(m, n) - 1);
        w = oracle::matmul(oracle::gaussian(m, r, rng), oracle::gaussian(r, n, rng));
      }
      const auto s = lrsms::svd(w);
      const std::size_t k = std::min(m, n);
      REQUIRE(s.u.rows() == m);
      REQUIRE(s.u.cols() == k);
      REQUIRE(s.vt.rows() == k);
      REQUIRE(s.vt.cols() == n);
      CHECK(std::is_sorted(s.sigma.rbegin(), s.sigma.rend()));
      CHECK(s.sigma.back() >= 0.0);
      CHECK(oracle::max_abs_diff(lrsms::matmul_tn(s.u, s.u), Matrix::identity(k)) < 1e-8);
      CHECK(oracle::max_abs_diff(lrsms::matmul_nt(s.vt, s.vt), Matrix::identity(k)) < 1e-8);
      const Matrix back = oracle::trunc_svd(s, k);
      CHECK(oracle::fro_diff(back, w) / std::max(oracle::fro(w), 1e-30) < 1e-8);
    }
  }

  TEST_CASE("svd sign convention") {
    Rng rng(17);
    const auto s = lrsms::svd(oracle::gaussian(9, 6, rng));
    for (std::size_t j = 0; j < s.u.cols(); ++j) {
      std::size_t arg = 0;
      for (std::size_t i = 1; i < s.u.rows(); ++i) {
        if (std::abs(s.u(i, j)) > std::abs(s.u(arg, j))) arg = i;
      }
      CHECK(s.u(arg, j) >= 0.0);
    }
  }

  TEST_CASE("svd is deterministic and permutation invariant") {
    Rng rng(18);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t m = 2 + rng.below(15), n = 2 + rng.below(15);
      const Matrix w = oracle::gaussian(m, n, rng);
      const auto a = lrsms::svd(w);
      const auto b = lrsms::svd(w);
      CHECK(a.sigma == b.sigma);
      CHECK(a.u == b.u);

      std::vector<std::size_t> rows(m), cols(n);
      std::iota(rows.begin(), rows.end(), 0);
      std::iota(cols.begin(), cols.end(), 0);
      for (std::size_t i = m - 1; i > 0; --i) std::swap(rows[i], rows[rng.below(i + 1)]);
      for (std::size_t i = n - 1; i > 0; --i) std::swap(cols[i], cols[rng.below(i + 1)]);
      Matrix p(m, n);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) p(i, j) = w(rows[i], cols[j]);
      }
      const auto c = lrsms::svd(p);
      for (std::size_t i = 0; i < a.sigma.size(); ++i) CHECK(std::abs(a.sigma[i] - c.sigma[i]) < 1e-8);
    }
  }

  TEST_CASE("svd reports non-convergence") {
    Rng rng(19);
    lrsms::SvdOptions opts;
    opts.max_sweeps = 1;
    try {
      (void)lrsms::svd(oracle::gaussian(30, 20, rng), opts);
      FAIL("expected NumericalError");
    } catch (const lrsms::NumericalError& e) {
      CHECK(std::string(e.what()).find("off-diagonal") != std::string::npos);
    }
  }

  TEST_CASE("reconstruct truncates") {
    const std::vector<double> d{5, 3, 1};
    const auto s = lrsms::svd(Matrix::diagonal(d));
    const Matrix r2 = lrsms::reconstruct(s, 2);
    CHECK(r2(0, 0) == doctest::Approx(5));
    CHECK(r2(1, 1) == doctest::Approx(3));
    CHECK(std::abs(r2(2, 2)) < 1e-14);
  }

  TEST_CASE("float and double casts round-trip exactly representable values") {
    const Matrix a{{0.5, -2}, {1024, 0.125}};
    CHECK(lrsms::cast<double>(lrsms::cast<float>(a)) == a);
  }
}
