// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

// Effective-rank analysis of weight matrices: how many singular directions
// are needed to hold a given share of a matrix's spectral energy.

#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lrsms/checkpoint.hpp"
#include "lrsms/linalg.hpp"
#include "lrsms/rank_plan.hpp"

namespace lrsms {

// frobenius: cumulative sigma^2; nuclear: cumulative sigma.
enum class Energy : std::uint8_t { frobenius, nuclear };
std::string_view to_string(Energy e);
Energy parse_energy(std::string_view s);

// Singular values at or below 1e-12 * sigma_max count as zero.
inline constexpr double kNegligibleSigma = 1e-12;

// Smallest k whose leading singular values hold at least `threshold` of the
// energy. Zero for a zero spectrum. Throws DomainError unless threshold is
// in (0, 1].
std::size_t count_for_energy(std::span<const double> sigma, double threshold = 0.95, Energy energy = Energy::frobenius);
std::size_t k95(const Matrix& w, double threshold = 0.95, Energy energy = Energy::frobenius);

struct RankRatioRecord {
  std::string stage;
  std::string layer;
  LayerKind kind = LayerKind::mhsa;
  Submodel submodel = Submodel::encoder;
  std::size_t block = 0;
  std::size_t blocks = 1;
  std::size_t k95 = 0;
  std::size_t ktotal = 0;
  double ratio = 0.0;

  friend bool operator==(const RankRatioRecord&, const RankRatioRecord&) = default;
};

struct RankRatioReport {
  Energy energy = Energy::frobenius;
  double threshold = 0.95;
  std::vector<RankRatioRecord> records;

  double mean_ratio() const;
  friend bool operator==(const RankRatioReport&, const RankRatioReport&) = default;
};

// One record per factorizable weight matrix, sorted by submodel, block and
// layer id. Factorized layers are analyzed on u v^T. Layers are analyzed on
// up to `threads` workers; the result does not depend on the count.
RankRatioReport analyze_checkpoint(const Checkpoint& ckpt, double threshold = 0.95, Energy energy = Energy::frobenius,
                                   std::size_t threads = 1);
// Concatenation in input (stage) order.
RankRatioReport analyze_checkpoints(const std::vector<Checkpoint>& ckpts, double threshold = 0.95,
                                    Energy energy = Energy::frobenius, std::size_t threads = 1);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  std::size_t points = 0;
};

// Ordinary least squares. Throws DomainError with fewer than two distinct x.
LineFit fit_line(std::span<const double> x, std::span<const double> y);

struct TrendFit {
  LayerKind kind;
  Submodel submodel;
  LineFit fit;  // ratio against b / B
};

// One fit per (kind, submodel) group present in the report.
std::vector<TrendFit> trend_fit(const RankRatioReport& report);

// Gamma whose ranges follow fitted lines pooled over submodels: start and
// end are the line at b/B = 0 and 1, clipped to [0.05, 1] and forced
// non-decreasing.
ScalingRanges suggest_gamma(const RankRatioReport& report);

// CSV: optional "# energy=... threshold=..." line, then the fixed header
// stage,layer,kind,submodel,block,k95,ktotal,ratio
void write_report_csv(std::ostream& os, const RankRatioReport& report);
RankRatioReport read_report_csv(std::istream& is);

}  // namespace lrsms
