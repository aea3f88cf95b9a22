// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrsms/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "lrsms/text.hpp"

namespace lrsms {

namespace pt = boost::property_tree;
namespace fs = std::filesystem;

namespace {

class Section {
 public:
  Section(const pt::ptree& tree, std::string name, std::set<std::string> keys)
      : name_(std::move(name)), keys_(std::move(keys)) {
    if (auto s = tree.get_child_optional(name_)) node_ = &*s;
    if (!node_) return;
    for (const auto& [k, v] : *node_) {
      if (!keys_.count(k)) throw UsageError("config: unknown key '" + k + "' in [" + name_ + "]");
      if (!v.empty()) throw UsageError("config: [" + name_ + "] " + k + " is not a plain value");
    }
  }

  std::optional<std::string> raw(const std::string& key) const {
    if (!node_) return std::nullopt;
    if (auto v = node_->get_optional<std::string>(pt::ptree::path_type(key, '\0'))) return std::string(trim(*v));
    return std::nullopt;
  }

  template <typename F>
  void with(const std::string& key, F&& apply) const {
    const auto v = raw(key);
    if (!v) return;
    try {
      apply(*v);
    } catch (const Error& e) {
      throw UsageError("config: [" + name_ + "] " + key + " = '" + *v + "': " + e.what());
    }
  }

  void size(const std::string& key, std::size_t& out) const {
    with(key, [&](const std::string& v) { out = parse_size(v); });
  }
  void u64(const std::string& key, std::uint64_t& out) const {
    with(key, [&](const std::string& v) { out = parse_size(v); });
  }
  void real(const std::string& key, double& out) const {
    with(key, [&](const std::string& v) { out = parse_double(v); });
  }

 private:
  const pt::ptree* node_ = nullptr;
  std::string name_;
  std::set<std::string> keys_;
};

std::string resolve(const std::string& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative()) path = fs::path(base) / path;
  return path.lexically_normal().string();
}

}  // namespace

void RunConfig::validate() const {
  try {
    model.validate();
    task.validate();
    train.validate();
    if (gamma) gamma->validate();
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (task.seq_len > model.max_seq) {
    throw UsageError("config: task seq_len " + std::to_string(task.seq_len) + " exceeds model max_seq " +
                     std::to_string(model.max_seq));
  }
  const int rank_sources = (gamma ? 1 : 0) + (uniform ? 1 : 0) + (plan_path ? 1 : 0);
  if (rank_sources > 1) throw UsageError("config: [rank] takes at most one of gamma, uniform, plan");
  if (uniform && !(*uniform > 0.0 && *uniform <= 1.0)) {
    throw UsageError("config: [rank] uniform must lie in (0, 1]");
  }
}

RunConfig parse_run_config(std::istream& is, const std::string& base_dir) {
  // The INI reader only knows ';' comments.
  std::ostringstream text;
  std::string line;
  while (std::getline(is, line)) {
    const auto t = trim(line);
    text << (!t.empty() && t.front() == '#' ? ";" : "") << line << '\n';
  }
  pt::ptree tree;
  try {
    std::istringstream in(text.str());
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw UsageError("config: line " + std::to_string(e.line()) + ": " + e.message());
  }
  const std::set<std::string> sections{"model", "task", "train", "rank", "output"};
  for (const auto& [k, v] : tree) {
    if (v.empty()) throw UsageError("config: key '" + k + "' outside any section");
    if (!sections.count(k)) throw UsageError("config: unknown section [" + k + "]");
  }

  RunConfig c;
  const Section model(tree, "model",
                      {"d_model", "n_heads", "d_ffn", "encoder_blocks", "decoder_blocks", "vocab", "max_seq", "seed"});
  model.size("d_model", c.model.d_model);
  model.size("n_heads", c.model.n_heads);
  model.size("d_ffn", c.model.d_ffn);
  model.size("encoder_blocks", c.model.encoder_blocks);
  model.size("decoder_blocks", c.model.decoder_blocks);
  model.size("vocab", c.model.vocab);
  model.size("max_seq", c.model.max_seq);
  model.u64("seed", c.model.seed);

  const Section task(tree, "task", {"kind", "seq_len", "min_len", "seed"});
  task.with("kind", [&](const std::string& v) { c.task.kind = parse_task_kind(v); });
  c.task.seq_len = c.model.max_seq;
  task.size("seq_len", c.task.seq_len);
  c.task.min_len = c.task.seq_len;
  task.size("min_len", c.task.min_len);
  task.u64("seed", c.task.seed);
  c.task.vocab = c.model.vocab;

  const Section train(tree, "train",
                      {"peak_lr", "warmup_epochs", "total_epochs", "cooldown_epochs", "schedule", "weight_decay",
                       "beta1", "beta2", "eps", "clip_norm", "batch_size", "steps_per_epoch", "eval_batches", "seed",
                       "checkpoint_interval"});
  train.real("peak_lr", c.train.peak_lr);
  train.size("warmup_epochs", c.train.warmup_epochs);
  train.size("total_epochs", c.train.total_epochs);
  train.size("cooldown_epochs", c.train.cooldown_epochs);
  train.with("schedule", [&](const std::string& v) { c.train.schedule = parse_schedule_kind(v); });
  train.real("weight_decay", c.train.weight_decay);
  train.real("beta1", c.train.beta1);
  train.real("beta2", c.train.beta2);
  train.real("eps", c.train.eps);
  train.real("clip_norm", c.train.clip_norm);
  train.size("batch_size", c.train.batch_size);
  train.size("steps_per_epoch", c.train.steps_per_epoch);
  train.size("eval_batches", c.train.eval_batches);
  train.u64("seed", c.train.seed);
  train.size("checkpoint_interval", c.train.checkpoint_interval);

  const Section rank(tree, "rank", {"gamma", "uniform", "plan"});
  rank.with("gamma", [&](const std::string& v) { c.gamma = ScalingRanges::parse(v); });
  rank.with("uniform", [&](const std::string& v) { c.uniform = parse_double(v); });
  if (auto p = rank.raw("plan")) c.plan_path = resolve(base_dir, *p);

  const Section output(tree, "output", {"dir"});
  if (auto d = output.raw("dir")) c.out_dir = resolve(base_dir, *d);

  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot read config '" + path + "'");
  const fs::path dir = fs::absolute(fs::path(path)).parent_path();
  return parse_run_config(is, dir.string());
}

void write_run_config(std::ostream& os, const RunConfig& c) {
  os << "[model]\n"
     << "d_model = " << c.model.d_model << "\n"
     << "n_heads = " << c.model.n_heads << "\n"
     << "d_ffn = " << c.model.d_ffn << "\n"
     << "encoder_blocks = " << c.model.encoder_blocks << "\n"
     << "decoder_blocks = " << c.model.decoder_blocks << "\n"
     << "vocab = " << c.model.vocab << "\n"
     << "max_seq = " << c.model.max_seq << "\n"
     << "seed = " << c.model.seed << "\n\n";
  os << "[task]\n"
     << "kind = " << to_string(c.task.kind) << "\n"
     << "seq_len = " << c.task.seq_len << "\n"
     << "min_len = " << c.task.min_len << "\n"
     << "seed = " << c.task.seed << "\n\n";
  const auto& t = c.train;
  os << "[train]\n"
     << "peak_lr = " << format_double(t.peak_lr) << "\n"
     << "warmup_epochs = " << t.warmup_epochs << "\n"
     << "total_epochs = " << t.total_epochs << "\n"
     << "cooldown_epochs = " << t.cooldown_epochs << "\n"
     << "schedule = " << to_string(t.schedule) << "\n"
     << "weight_decay = " << format_double(t.weight_decay) << "\n"
     << "beta1 = " << format_double(t.beta1) << "\n"
     << "beta2 = " << format_double(t.beta2) << "\n"
     << "eps = " << format_double(t.eps) << "\n"
     << "clip_norm = " << format_double(t.clip_norm) << "\n"
     << "batch_size = " << t.batch_size << "\n"
     << "steps_per_epoch = " << t.steps_per_epoch << "\n"
     << "eval_batches = " << t.eval_batches << "\n"
     << "seed = " << t.seed << "\n"
     << "checkpoint_interval = " << t.checkpoint_interval << "\n";
  if (c.gamma || c.uniform || c.plan_path) {
    os << "\n[rank]\n";
    if (c.gamma) os << "gamma = " << c.gamma->to_string() << "\n";
    if (c.uniform) os << "uniform = " << format_double(*c.uniform) << "\n";
    if (c.plan_path) os << "plan = " << *c.plan_path << "\n";
  }
  if (!c.out_dir.empty()) os << "\n[output]\ndir = " << c.out_dir << "\n";
}

}  // namespace lrsms
