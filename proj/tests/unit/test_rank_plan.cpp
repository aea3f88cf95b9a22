// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sstream>

#include "lrsms/model.hpp"
#include "lrsms/rank_plan.hpp"
#include "lrsms/random.hpp"

using namespace lrsms;

namespace {

LayerSpec layer(std::string id, LayerKind kind, std::size_t b, std::size_t blocks, std::size_t m, std::size_t n,
                Submodel sub = Submodel::encoder) {
  return LayerSpec{std::move(id), kind, sub, b, blocks, m, n};
}

// Hand-written rank rule: nearest integer, halves up, at least 1.
std::size_t hand_rank(double alpha, std::size_t m, std::size_t n) {
  const std::size_t k = std::min(m, n);
  std::size_t r = static_cast<std::size_t>(alpha * static_cast<double>(k) + 0.5);
  return std::clamp<std::size_t>(r, 1, k);
}

}  // namespace

TEST_SUITE("rank_plan") {
  TEST_CASE("rank rule") {
    CHECK(rank_for(0.12, 512, 512) == 61);
    CHECK(rank_for(1.0, 512, 2048) == 512);
    CHECK(rank_for(0.0, 64, 64) == 1);
    CHECK(rank_for(0.001, 64, 64) == 1);
    CHECK(rank_for(0.5 / 64.0, 64, 64) == 1);
    CHECK(rank_for(1.5 / 64.0, 64, 64) == 2);  // half rounds up
  }

  TEST_CASE("uniform plan") {
    const std::vector<LayerSpec> ls{layer("a", LayerKind::ffn, 0, 1, 512, 2048), layer("b", LayerKind::mhsa, 0, 1, 256, 256)};
    const RankPlan p = uniform_plan(ls, 0.25);
    CHECK(p.find("a")->rank == 128);
    CHECK(p.find("b")->rank == 64);
    const RankPlan full = uniform_plan(ls, 1.0);
    CHECK(full.find("a")->rank == 512);
    CHECK(full.find("b")->rank == 256);
    CHECK(full.find("a")->factorized);
    CHECK_THROWS_AS(uniform_plan(ls, 0.0), DomainError);
    CHECK_THROWS_AS(uniform_plan(ls, 1.01), DomainError);
  }

  TEST_CASE("linear alpha hand evaluation") {
    CHECK(linear_alpha(6, 12, 0.2, 0.5) == doctest::Approx(0.35));
    const std::vector<LayerSpec> ls{layer("f", LayerKind::ffn, 6, 12, 256, 1024)};
    ScalingRanges g{0.1, 0.2, 0.2, 0.5};
    const RankPlan p = linear_plan(ls, g);
    CHECK(p.find("f")->alpha == doctest::Approx(0.35));
    CHECK(p.find("f")->rank == 90);
    CHECK_THROWS_AS(linear_alpha(0, 0, 0.1, 0.2), DomainError);
  }

  TEST_CASE("full-rank override keeps a kind dense") {
    const std::vector<LayerSpec> ls{layer("q", LayerKind::mhsa, 0, 2, 8, 8), layer("f", LayerKind::ffn, 1, 2, 16, 8)};
    const ScalingRanges g = ScalingRanges::parse("0.1,0.2,full");
    CHECK(g.ffn_full_rank);
    const RankPlan p = linear_plan(ls, g);
    CHECK(p.find("q")->factorized);
    CHECK_FALSE(p.find("f")->factorized);
    CHECK(p.find("f")->rank == 8);
  }

  TEST_CASE("gamma parsing and validation") {
    const ScalingRanges g = ScalingRanges::parse("0.1,0.2,0.2,0.5");
    CHECK(g.mhsa_start == 0.1);
    CHECK(g.ffn_end == 0.5);
    CHECK(ScalingRanges::parse(g.to_string()).to_string() == g.to_string());
    try {
      (void)ScalingRanges::parse("0.5,0.2,0.2,0.5");
      FAIL("expected DomainError");
    } catch (const DomainError& e) {
      CHECK(std::string(e.what()).find("exceeds end") != std::string::npos);
    }
    CHECK_THROWS_AS(ScalingRanges::parse("0.1,0.2,0.2"), DomainError);
    CHECK_THROWS_AS(ScalingRanges::parse("0.1,1.2,0.2,0.5"), DomainError);
    CHECK_THROWS_AS(ScalingRanges::parse("0.1,0.2,0.2,0.5,0.6"), DomainError);
    CHECK_THROWS_AS(ScalingRanges::parse("a,b,c,d"), Error);
  }

  TEST_CASE("plan algebra properties over random draws") {
    Rng rng(41);
    for (int trial = 0; trial < 1000; ++trial) {
      double a = rng.uniform(), b = rng.uniform(), c = rng.uniform(), d = rng.uniform();
      if (a > b) std::swap(a, b);
      if (c > d) std::swap(c, d);
      const ScalingRanges g{a, b, c, d};
      const std::size_t blocks = 1 + rng.below(16);
      const std::size_t m = 1 + rng.below(600), n = 1 + rng.below(600);
      std::vector<LayerSpec> ls;
      for (std::size_t blk = 0; blk < blocks; ++blk) {
        ls.push_back(layer("m" + std::to_string(blk), LayerKind::mhsa, blk, blocks, m, m));
        ls.push_back(layer("f" + std::to_string(blk), LayerKind::ffn, blk, blocks, m, n));
      }
      const RankPlan p = linear_plan(ls, g);
      // b = 0 endpoint and the algebraic b = B boundary
      CHECK(linear_alpha(0, blocks, a, b) == a);
      CHECK(linear_alpha(blocks, blocks, a, b) == doctest::Approx(b).epsilon(1e-12));
      for (std::size_t blk = 0; blk < blocks; ++blk) {
        const PlanEntry& em = *p.find("m" + std::to_string(blk));
        const PlanEntry& ef = *p.find("f" + std::to_string(blk));
        CHECK(em.alpha >= a - 1e-15);
        CHECK(em.alpha <= b + 1e-15);
        CHECK(ef.rank == hand_rank(ef.alpha, m, n));
        CHECK(ef.rank >= 1);
        if (blk > 0) {
          CHECK(em.alpha >= p.find("m" + std::to_string(blk - 1))->alpha);
          CHECK(ef.rank >= p.find("f" + std::to_string(blk - 1))->rank);
        }
      }
      // degenerate range reduces to the uniform plan
      const double alpha = std::max(1e-3, rng.uniform());
      const RankPlan lin = linear_plan(ls, ScalingRanges{alpha, alpha, alpha, alpha});
      const RankPlan uni = uniform_plan(ls, alpha);
      for (const auto& l : ls) CHECK(lin.find(l.id)->rank == uni.find(l.id)->rank);
    }
  }

  TEST_CASE("plan summary arithmetic") {
    const PlanSummary empty = plan_summary(RankPlan{}, {});
    CHECK(empty.total_dense() == 0);
    CHECK(empty.total_planned() == 0);

    const std::vector<LayerSpec> ls{layer("x", LayerKind::mhsa, 0, 1, 512, 512)};
    const PlanSummary s = plan_summary(uniform_plan(ls, 0.12), ls);
    CHECK(s.layer_planned == 62464);
    CHECK(s.layer_dense == 262144);
    CHECK(s.mhsa.planned == 62464);
    CHECK(s.factorized_layers == 1);
    CHECK_THROWS_AS(plan_summary(RankPlan{}, ls), ConsistencyError);
  }

  TEST_CASE("coverage check lists missing, unknown and mismatched ids") {
    const std::vector<LayerSpec> ls{layer("a", LayerKind::mhsa, 0, 1, 4, 4), layer("b", LayerKind::ffn, 0, 1, 8, 4)};
    RankPlan p = uniform_plan(ls, 0.5);
    CHECK_NOTHROW(check_plan_covers(p, ls));
    p.entries.erase("a");
    p.entries["zz.q"] = p.entries["b"];
    p.entries["b"].m = 9;
    try {
      check_plan_covers(p, ls);
      FAIL("expected ConsistencyError");
    } catch (const ConsistencyError& e) {
      const std::string what = e.what();
      CHECK(what.find("a") != std::string::npos);
      CHECK(what.find("zz.q") != std::string::npos);
      CHECK(what.find("b") != std::string::npos);
    }
  }

  TEST_CASE("plan file round trip") {
    const ModelSpec spec;
    const auto ls = enumerate_layers(spec);
    for (const char* g : {"0.1,0.2,0.2,0.5", "full,0.3,0.6", "0.25,0.25,full"}) {
      const RankPlan p = linear_plan(ls, ScalingRanges::parse(g));
      std::ostringstream a;
      write_plan(a, p, std::string("gamma ") + g);
      std::istringstream in(a.str());
      const RankPlan back = read_plan(in);
      CHECK(back == p);
      std::ostringstream b;
      write_plan(b, back, std::string("gamma ") + g);
      CHECK(a.str() == b.str());
    }
  }

  TEST_CASE("plan reader rejects inconsistent records") {
    const std::string head = "# lrsms rank plan v1\n";
    std::istringstream bad_rank(head + "x mhsa encoder 0 1 8 8 0.5 3\n");
    CHECK_THROWS_AS(read_plan(bad_rank), UsageError);
    std::istringstream bad_kind(head + "x conv encoder 0 1 8 8 0.5 4\n");
    CHECK_THROWS_AS(read_plan(bad_kind), Error);
    std::istringstream no_header("x mhsa encoder 0 1 8 8 0.5 4\n");
    CHECK_THROWS_AS(read_plan(no_header), UsageError);
    std::istringstream good(head + "x mhsa encoder 0 1 8 8 0.5 4\ny ffn decoder 1 2 16 8 1 dense\n");
    const RankPlan p = read_plan(good);
    CHECK(p.find("x")->rank == 4);
    CHECK_FALSE(p.find("y")->factorized);
  }
}
