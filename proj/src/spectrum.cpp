// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrsms/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>

#include "lrsms/parallel.hpp"
#include "lrsms/text.hpp"

namespace lrsms {

std::string_view to_string(Energy e) { return e == Energy::frobenius ? "frobenius" : "nuclear"; }

Energy parse_energy(std::string_view s) {
  if (s == "frobenius") return Energy::frobenius;
  if (s == "nuclear") return Energy::nuclear;
  throw DomainError("unknown energy criterion '" + std::string(s) + "' (expected frobenius or nuclear)");
}

std::size_t count_for_energy(std::span<const double> sigma, double threshold, Energy energy) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw DomainError("energy threshold " + format_double(threshold) + " is outside (0, 1]");
  }
  double sigma_max = 0.0;
  for (double s : sigma) sigma_max = std::max(sigma_max, s);
  if (sigma_max == 0.0) return 0;
  const double cutoff = kNegligibleSigma * sigma_max;
  std::vector<double> prefix;
  prefix.reserve(sigma.size());
  double acc = 0.0;
  for (double s : sigma) {
    if (s > cutoff) acc += energy == Energy::frobenius ? s * s : s;
    prefix.push_back(acc);
  }
  const double target = threshold * acc;
  for (std::size_t k = 0; k < prefix.size(); ++k) {
    if (prefix[k] >= target) return k + 1;
  }
  return prefix.size();
}

std::size_t k95(const Matrix& w, double threshold, Energy energy) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw DomainError("energy threshold " + format_double(threshold) + " is outside (0, 1]");
  }
  return count_for_energy(svd(w).sigma, threshold, energy);
}

double RankRatioReport::mean_ratio() const {
  if (records.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : records) s += r.ratio;
  return s / static_cast<double>(records.size());
}

RankRatioReport analyze_checkpoint(const Checkpoint& ckpt, double threshold, Energy energy, std::size_t threads) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw DomainError("energy threshold " + format_double(threshold) + " is outside (0, 1]");
  }
  const ModelSpec spec = ckpt.spec();
  const std::string stage = ckpt.stage();
  const auto layers = enumerate_layers(spec);

  std::vector<Matrix> weights(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (const TensorRecord* w = ckpt.find(l.id + ".w")) {
      if (w->rows != l.m || w->cols != l.n) throw SchemaError("checkpoint: tensor '" + w->name + "' has wrong shape");
      weights[i] = w->matrix();
      continue;
    }
    const TensorRecord* u = ckpt.find(l.id + ".u");
    const TensorRecord* v = ckpt.find(l.id + ".v");
    if (!u || !v) throw SchemaError("checkpoint: no weight tensor for layer '" + l.id + "'");
    if (u->rows != l.m || v->rows != l.n || u->cols != v->cols) {
      throw SchemaError("checkpoint: factors of layer '" + l.id + "' have wrong shapes");
    }
    weights[i] = matmul_nt(u->matrix(), v->matrix());
  }

  RankRatioReport report;
  report.energy = energy;
  report.threshold = threshold;
  report.records.resize(layers.size());
  parallel_for(layers.size(), threads, [&](std::size_t i) {
    const auto& l = layers[i];
    RankRatioRecord r;
    r.stage = stage;
    r.layer = l.id;
    r.kind = l.kind;
    r.submodel = l.submodel;
    r.block = l.block;
    r.blocks = l.blocks;
    r.ktotal = l.max_rank();
    r.k95 = k95(weights[i], threshold, energy);
    r.ratio = static_cast<double>(r.k95) / static_cast<double>(r.ktotal);
    report.records[i] = std::move(r);
  });
  std::sort(report.records.begin(), report.records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.submodel, a.block, a.layer) < std::tie(b.submodel, b.block, b.layer);
  });
  return report;
}

RankRatioReport analyze_checkpoints(const std::vector<Checkpoint>& ckpts, double threshold, Energy energy,
                                    std::size_t threads) {
  RankRatioReport out;
  out.energy = energy;
  out.threshold = threshold;
  for (const auto& c : ckpts) {
    auto r = analyze_checkpoint(c, threshold, energy, threads);
    out.records.insert(out.records.end(), r.records.begin(), r.records.end());
  }
  return out;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("fit_line: x and y lengths differ");
  const std::size_t n = x.size();
  if (n < 2) throw DomainError("fit_line: need at least 2 points, got " + std::to_string(n));
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw DomainError("fit_line: need at least 2 distinct x values");
  LineFit f;
  f.points = n;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (n > 2) {
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = y[i] - (f.intercept + f.slope * x[i]);
      sse += e * e;
    }
    f.slope_stderr = std::sqrt(sse / static_cast<double>(n - 2) / sxx);
  }
  return f;
}

namespace {

double depth(const RankRatioRecord& r) { return static_cast<double>(r.block) / static_cast<double>(r.blocks); }

}  // namespace

std::vector<TrendFit> trend_fit(const RankRatioReport& report) {
  std::map<std::pair<Submodel, LayerKind>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : report.records) {
    auto& g = groups[{r.submodel, r.kind}];
    g.first.push_back(depth(r));
    g.second.push_back(r.ratio);
  }
  std::vector<TrendFit> out;
  for (const auto& [key, xy] : groups) {
    out.push_back(TrendFit{key.second, key.first, fit_line(xy.first, xy.second)});
  }
  return out;
}

ScalingRanges suggest_gamma(const RankRatioReport& report) {
  ScalingRanges g;
  auto pooled = [&](LayerKind kind, double& start, double& end, bool& full) {
    std::vector<double> x;
    std::vector<double> y;
    for (const auto& r : report.records) {
      if (r.kind != kind) continue;
      x.push_back(depth(r));
      y.push_back(r.ratio);
    }
    if (x.empty()) {
      full = true;
      return;
    }
    const LineFit f = fit_line(x, y);
    start = std::clamp(f.intercept, 0.05, 1.0);
    end = std::max(start, std::clamp(f.intercept + f.slope, 0.05, 1.0));
  };
  pooled(LayerKind::mhsa, g.mhsa_start, g.mhsa_end, g.mhsa_full_rank);
  pooled(LayerKind::ffn, g.ffn_start, g.ffn_end, g.ffn_full_rank);
  return g;
}

void write_report_csv(std::ostream& os, const RankRatioReport& report) {
  os << "# energy=" << to_string(report.energy) << " threshold=" << format_double(report.threshold) << "\n";
  os << "stage,layer,kind,submodel,block,k95,ktotal,ratio\n";
  for (const auto& r : report.records) {
    os << r.stage << ',' << r.layer << ',' << to_string(r.kind) << ',' << to_string(r.submodel) << ',' << r.block
       << ',' << r.k95 << ',' << r.ktotal << ',' << format_double(r.ratio) << '\n';
  }
}

RankRatioReport read_report_csv(std::istream& is) {
  RankRatioReport report;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      for (auto kv : split_ws(t.substr(1))) {
        const auto eq = kv.find('=');
        if (eq == std::string_view::npos) continue;
        if (kv.substr(0, eq) == "energy") report.energy = parse_energy(kv.substr(eq + 1));
        if (kv.substr(0, eq) == "threshold") report.threshold = parse_double(kv.substr(eq + 1));
      }
      continue;
    }
    if (!header) {
      if (t != "stage,layer,kind,submodel,block,k95,ktotal,ratio") {
        throw SchemaError("report: unexpected header '" + std::string(t) + "'");
      }
      header = true;
      continue;
    }
    const auto f = split(t, ',');
    if (f.size() != 8) throw SchemaError("report line " + std::to_string(lineno) + ": expected 8 fields");
    RankRatioRecord r;
    r.stage = std::string(f[0]);
    r.layer = std::string(f[1]);
    r.kind = parse_layer_kind(f[2]);
    r.submodel = parse_submodel(f[3]);
    r.block = parse_size(f[4]);
    r.k95 = parse_size(f[5]);
    r.ktotal = parse_size(f[6]);
    r.ratio = parse_double(f[7]);
    report.records.push_back(std::move(r));
  }
  if (!header) throw SchemaError("report: missing header");
  // The CSV omits B; recover it per submodel as the deepest block + 1.
  std::map<Submodel, std::size_t> blocks;
  for (const auto& r : report.records) blocks[r.submodel] = std::max(blocks[r.submodel], r.block + 1);
  for (auto& r : report.records) r.blocks = blocks[r.submodel];
  return report;
}

}  // namespace lrsms
