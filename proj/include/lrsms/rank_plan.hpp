// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

// Per-layer rank assignment. A layer with scaling factor alpha gets rank
// clamp(round_half_up(alpha * min(m, n)), 1, min(m, n)).

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lrsms {

enum class LayerKind : std::uint8_t { mhsa, ffn };
enum class Submodel : std::uint8_t { encoder, decoder };

std::string_view to_string(LayerKind k);
std::string_view to_string(Submodel s);
LayerKind parse_layer_kind(std::string_view s);
Submodel parse_submodel(std::string_view s);

struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::mhsa;
  Submodel submodel = Submodel::encoder;
  std::size_t block = 0;   // b, zero-based
  std::size_t blocks = 1;  // B of the owning submodel
  std::size_t m = 0;       // output dim
  std::size_t n = 0;       // input dim

  std::size_t max_rank() const noexcept { return m < n ? m : n; }
};

// Gamma: per-kind [start, end] scaling ranges. A kind flagged full-rank is
// kept dense and left out of the factorized set.
struct ScalingRanges {
  double mhsa_start = 1.0;
  double mhsa_end = 1.0;
  double ffn_start = 1.0;
  double ffn_end = 1.0;
  bool mhsa_full_rank = false;
  bool ffn_full_rank = false;

  // Throws DomainError naming the violated bound.
  void validate() const;
  // "a,b,c,d"; a pair may be replaced by the single word "full".
  static ScalingRanges parse(std::string_view text);
  std::string to_string() const;
};

struct PlanEntry {
  LayerKind kind = LayerKind::mhsa;
  Submodel submodel = Submodel::encoder;
  std::size_t block = 0;
  std::size_t blocks = 1;
  std::size_t m = 0;
  std::size_t n = 0;
  bool factorized = true;
  double alpha = 1.0;
  std::size_t rank = 0;  // min(m, n) when not factorized

  friend bool operator==(const PlanEntry&, const PlanEntry&) = default;
};

struct RankPlan {
  std::map<std::string, PlanEntry> entries;

  const PlanEntry* find(const std::string& id) const;
  friend bool operator==(const RankPlan&, const RankPlan&) = default;
};

// round-half-up, clamped to [1, min(m, n)].
std::size_t rank_for(double alpha, std::size_t m, std::size_t n);

// alpha_l = b (alpha_end - alpha_start) / B + alpha_start
double linear_alpha(std::size_t block, std::size_t blocks, double start, double end);

RankPlan uniform_plan(const std::vector<LayerSpec>& layers, double alpha);
RankPlan linear_plan(const std::vector<LayerSpec>& layers, const ScalingRanges& gamma);
// Every layer stays dense.
RankPlan full_rank_plan(const std::vector<LayerSpec>& layers);

// Throws ConsistencyError listing ids in `layers` missing from the plan,
// ids in the plan unknown to `layers`, and entries whose dims disagree.
void check_plan_covers(const RankPlan& plan, const std::vector<LayerSpec>& layers);

struct KindTotals {
  std::uint64_t dense = 0;
  std::uint64_t planned = 0;
};

struct PlanSummary {
  std::uint64_t layer_dense = 0;    // weights of the layer set at full rank
  std::uint64_t layer_planned = 0;  // weights of the layer set under the plan
  std::uint64_t fixed = 0;          // parameters outside the layer set
  KindTotals mhsa;
  KindTotals ffn;
  std::size_t factorized_layers = 0;

  std::uint64_t total_dense() const noexcept { return layer_dense + fixed; }
  std::uint64_t total_planned() const noexcept { return layer_planned + fixed; }
  // total_dense / total_planned (1 for an empty model).
  double compression() const noexcept;
};

PlanSummary plan_summary(const RankPlan& plan, const std::vector<LayerSpec>& layers, std::uint64_t fixed_params = 0);
void print_summary(std::ostream& os, const PlanSummary& s);

// Plan text format: '#' comment lines, then one record per layer:
//   id kind submodel block blocks m n alpha rank
// where rank is an integer or "dense" (alpha is then ignored and written 1).
void write_plan(std::ostream& os, const RankPlan& plan, std::string_view comment = {});
RankPlan read_plan(std::istream& is);
void save_plan(const std::string& path, const RankPlan& plan, std::string_view comment = {});
RankPlan load_plan(const std::string& path);

}  // namespace lrsms
