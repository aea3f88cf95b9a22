// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrsms/rank_plan.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "lrsms/error.hpp"
#include "lrsms/text.hpp"

namespace lrsms {

std::string_view to_string(LayerKind k) { return k == LayerKind::mhsa ? "mhsa" : "ffn"; }
std::string_view to_string(Submodel s) { return s == Submodel::encoder ? "encoder" : "decoder"; }

LayerKind parse_layer_kind(std::string_view s) {
  if (s == "mhsa") return LayerKind::mhsa;
  if (s == "ffn") return LayerKind::ffn;
  throw DomainError("unknown layer kind '" + std::string(s) + "'");
}

Submodel parse_submodel(std::string_view s) {
  if (s == "encoder") return Submodel::encoder;
  if (s == "decoder") return Submodel::decoder;
  throw DomainError("unknown submodel '" + std::string(s) + "'");
}

void ScalingRanges::validate() const {
  auto in_unit = [](double x, const char* name) {
    if (!(x >= 0.0 && x <= 1.0)) {
      throw DomainError(std::string("gamma: ") + name + " = " + format_double(x) + " is outside [0, 1]");
    }
  };
  if (!mhsa_full_rank) {
    in_unit(mhsa_start, "mhsa start");
    in_unit(mhsa_end, "mhsa end");
    if (mhsa_start > mhsa_end) {
      throw DomainError("gamma: mhsa start " + format_double(mhsa_start) + " exceeds end " +
                        format_double(mhsa_end) + " (ranges must be non-decreasing)");
    }
  }
  if (!ffn_full_rank) {
    in_unit(ffn_start, "ffn start");
    in_unit(ffn_end, "ffn end");
    if (ffn_start > ffn_end) {
      throw DomainError("gamma: ffn start " + format_double(ffn_start) + " exceeds end " +
                        format_double(ffn_end) + " (ranges must be non-decreasing)");
    }
  }
}

ScalingRanges ScalingRanges::parse(std::string_view text) {
  const auto parts = split(text, ',');
  ScalingRanges g;
  std::size_t i = 0;
  auto take_pair = [&](double& start, double& end, bool& full, const char* kind) {
    if (i >= parts.size()) throw DomainError(std::string("gamma: missing ") + kind + " range in '" + std::string(text) + "'");
    if (trim(parts[i]) == "full") {
      full = true;
      ++i;
      return;
    }
    if (i + 1 >= parts.size()) throw DomainError(std::string("gamma: incomplete ") + kind + " range in '" + std::string(text) + "'");
    start = parse_double(parts[i++]);
    end = parse_double(parts[i++]);
  };
  take_pair(g.mhsa_start, g.mhsa_end, g.mhsa_full_rank, "mhsa");
  take_pair(g.ffn_start, g.ffn_end, g.ffn_full_rank, "ffn");
  if (i != parts.size()) throw DomainError("gamma: trailing values in '" + std::string(text) + "'");
  g.validate();
  return g;
}

std::string ScalingRanges::to_string() const {
  std::string out;
  out += mhsa_full_rank ? "full" : format_double(mhsa_start) + "," + format_double(mhsa_end);
  out += ",";
  out += ffn_full_rank ? "full" : format_double(ffn_start) + "," + format_double(ffn_end);
  return out;
}

const PlanEntry* RankPlan::find(const std::string& id) const {
  auto it = entries.find(id);
  return it == entries.end() ? nullptr : &it->second;
}

std::size_t rank_for(double alpha, std::size_t m, std::size_t n) {
  const std::size_t k = std::min(m, n);
  const double r = std::floor(alpha * static_cast<double>(k) + 0.5);
  if (r < 1.0) return 1;
  if (r > static_cast<double>(k)) return k;
  return static_cast<std::size_t>(r);
}

double linear_alpha(std::size_t block, std::size_t blocks, double start, double end) {
  if (blocks == 0) throw DomainError("linear plan: submodel has B = 0 blocks");
  return static_cast<double>(block) * (end - start) / static_cast<double>(blocks) + start;
}

namespace {

PlanEntry entry_for(const LayerSpec& l) {
  PlanEntry e;
  e.kind = l.kind;
  e.submodel = l.submodel;
  e.block = l.block;
  e.blocks = l.blocks;
  e.m = l.m;
  e.n = l.n;
  return e;
}

void check_layer(const LayerSpec& l) {
  if (l.m == 0 || l.n == 0) throw DomainError("layer " + l.id + ": dims must be positive");
  if (l.blocks == 0) throw DomainError("layer " + l.id + ": submodel has B = 0 blocks");
}

}  // namespace

RankPlan uniform_plan(const std::vector<LayerSpec>& layers, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw DomainError("uniform plan: alpha = " + format_double(alpha) + " is outside (0, 1]");
  }
  RankPlan plan;
  for (const auto& l : layers) {
    check_layer(l);
    PlanEntry e = entry_for(l);
    e.alpha = alpha;
    e.rank = rank_for(alpha, l.m, l.n);
    plan.entries.emplace(l.id, e);
  }
  return plan;
}

RankPlan linear_plan(const std::vector<LayerSpec>& layers, const ScalingRanges& gamma) {
  gamma.validate();
  RankPlan plan;
  for (const auto& l : layers) {
    check_layer(l);
    PlanEntry e = entry_for(l);
    const bool mhsa = l.kind == LayerKind::mhsa;
    if (mhsa ? gamma.mhsa_full_rank : gamma.ffn_full_rank) {
      e.factorized = false;
      e.alpha = 1.0;
      e.rank = l.max_rank();
    } else {
      const double start = mhsa ? gamma.mhsa_start : gamma.ffn_start;
      const double end = mhsa ? gamma.mhsa_end : gamma.ffn_end;
      e.alpha = linear_alpha(l.block, l.blocks, start, end);
      e.rank = rank_for(e.alpha, l.m, l.n);
    }
    plan.entries.emplace(l.id, e);
  }
  return plan;
}

RankPlan full_rank_plan(const std::vector<LayerSpec>& layers) {
  RankPlan plan;
  for (const auto& l : layers) {
    PlanEntry e = entry_for(l);
    e.factorized = false;
    e.alpha = 1.0;
    e.rank = l.max_rank();
    plan.entries.emplace(l.id, e);
  }
  return plan;
}

void check_plan_covers(const RankPlan& plan, const std::vector<LayerSpec>& layers) {
  std::vector<std::string> missing;
  std::vector<std::string> mismatched;
  std::set<std::string> known;
  for (const auto& l : layers) {
    known.insert(l.id);
    const PlanEntry* e = plan.find(l.id);
    if (!e) {
      missing.push_back(l.id);
    } else if (e->m != l.m || e->n != l.n || e->kind != l.kind || e->submodel != l.submodel ||
               e->block != l.block || e->blocks != l.blocks) {
      mismatched.push_back(l.id);
    }
  }
  std::vector<std::string> extra;
  for (const auto& [id, e] : plan.entries) {
    if (!known.contains(id)) extra.push_back(id);
  }
  if (missing.empty() && extra.empty() && mismatched.empty()) return;
  std::string msg = "plan does not match model layers;";
  if (!missing.empty()) msg += " missing ids: " + join(missing, ", ") + ";";
  if (!extra.empty()) msg += " unknown ids: " + join(extra, ", ") + ";";
  if (!mismatched.empty()) msg += " mismatched ids: " + join(mismatched, ", ") + ";";
  msg.pop_back();
  throw ConsistencyError(msg);
}

double PlanSummary::compression() const noexcept {
  if (total_planned() == 0) return 1.0;
  return static_cast<double>(total_dense()) / static_cast<double>(total_planned());
}

PlanSummary plan_summary(const RankPlan& plan, const std::vector<LayerSpec>& layers, std::uint64_t fixed_params) {
  PlanSummary s;
  s.fixed = fixed_params;
  for (const auto& l : layers) {
    const PlanEntry* e = plan.find(l.id);
    if (!e) throw ConsistencyError("plan summary: layer '" + l.id + "' missing from plan");
    const std::uint64_t dense = static_cast<std::uint64_t>(l.m) * l.n;
    const std::uint64_t planned =
        e->factorized ? static_cast<std::uint64_t>(e->rank) * (l.m + l.n) : dense;
    s.layer_dense += dense;
    s.layer_planned += planned;
    KindTotals& k = l.kind == LayerKind::mhsa ? s.mhsa : s.ffn;
    k.dense += dense;
    k.planned += planned;
    if (e->factorized) ++s.factorized_layers;
  }
  return s;
}

void print_summary(std::ostream& os, const PlanSummary& s) {
  auto ratio = [](std::uint64_t dense, std::uint64_t planned) {
    return planned == 0 ? 1.0 : static_cast<double>(dense) / static_cast<double>(planned);
  };
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %14s %14s %12s\n", "group", "dense", "planned", "compression");
  os << line;
  std::snprintf(line, sizeof line, "%-8s %14llu %14llu %11.3fx\n", "mhsa", static_cast<unsigned long long>(s.mhsa.dense),
                static_cast<unsigned long long>(s.mhsa.planned), ratio(s.mhsa.dense, s.mhsa.planned));
  os << line;
  std::snprintf(line, sizeof line, "%-8s %14llu %14llu %11.3fx\n", "ffn", static_cast<unsigned long long>(s.ffn.dense),
                static_cast<unsigned long long>(s.ffn.planned), ratio(s.ffn.dense, s.ffn.planned));
  os << line;
  std::snprintf(line, sizeof line, "%-8s %14llu %14llu\n", "other", static_cast<unsigned long long>(s.fixed),
                static_cast<unsigned long long>(s.fixed));
  os << line;
  std::snprintf(line, sizeof line, "%-8s %14llu %14llu %11.3fx\n", "total",
                static_cast<unsigned long long>(s.total_dense()), static_cast<unsigned long long>(s.total_planned()),
                s.compression());
  os << line;
  os << "factorized layers: " << s.factorized_layers << "\n";
}

void write_plan(std::ostream& os, const RankPlan& plan, std::string_view comment) {
  os << "# lrsms rank plan v1\n";
  if (!comment.empty()) {
    for (const auto& line : split(comment, '\n')) os << "# " << line << "\n";
  }
  os << "# id kind submodel block blocks m n alpha rank\n";
  for (const auto& [id, e] : plan.entries) {
    os << id << ' ' << to_string(e.kind) << ' ' << to_string(e.submodel) << ' ' << e.block << ' ' << e.blocks << ' '
       << e.m << ' ' << e.n << ' ' << format_double(e.factorized ? e.alpha : 1.0) << ' ';
    if (e.factorized) {
      os << e.rank;
    } else {
      os << "dense";
    }
    os << '\n';
  }
}

RankPlan read_plan(std::istream& is) {
  RankPlan plan;
  std::string line;
  std::size_t lineno = 0;
  bool saw_magic = false;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string_view t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      if (t == "# lrsms rank plan v1") saw_magic = true;
      continue;
    }
    const auto f = split_ws(t);
    auto fail = [&](const std::string& why) {
      throw UsageError("plan line " + std::to_string(lineno) + ": " + why);
    };
    if (f.size() != 9) fail("expected 9 fields, got " + std::to_string(f.size()));
    PlanEntry e;
    try {
      e.kind = parse_layer_kind(f[1]);
      e.submodel = parse_submodel(f[2]);
      e.block = parse_size(f[3]);
      e.blocks = parse_size(f[4]);
      e.m = parse_size(f[5]);
      e.n = parse_size(f[6]);
      e.alpha = parse_double(f[7]);
    } catch (const Error& ex) {
      fail(ex.what());
    }
    if (e.m == 0 || e.n == 0 || e.blocks == 0 || e.block > e.blocks) fail("invalid dims or block index");
    if (!(e.alpha >= 0.0 && e.alpha <= 1.0)) fail("alpha outside [0, 1]");
    if (f[8] == "dense") {
      e.factorized = false;
      e.rank = std::min(e.m, e.n);
    } else {
      try {
        e.rank = parse_size(f[8]);
      } catch (const Error& ex) {
        fail(ex.what());
      }
      if (e.rank != rank_for(e.alpha, e.m, e.n)) {
        fail("rank " + std::to_string(e.rank) + " does not match alpha " + std::string(f[7]) + " (expected " +
             std::to_string(rank_for(e.alpha, e.m, e.n)) + ")");
      }
    }
    if (!plan.entries.emplace(std::string(f[0]), e).second) fail("duplicate layer id '" + std::string(f[0]) + "'");
  }
  if (!saw_magic) throw UsageError("plan: missing '# lrsms rank plan v1' header");
  return plan;
}

void save_plan(const std::string& path, const RankPlan& plan, std::string_view comment) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write plan file '" + path + "'");
  write_plan(os, plan, comment);
}

RankPlan load_plan(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw UsageError("cannot read plan file '" + path + "'");
  return read_plan(is);
}

}  // namespace lrsms
