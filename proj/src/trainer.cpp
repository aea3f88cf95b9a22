// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrsms/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <istream>
#include <numbers>
#include <ostream>

#include "lrsms/checkpoint.hpp"
#include "lrsms/parallel.hpp"
#include "lrsms/random.hpp"
#include "lrsms/text.hpp"

namespace lrsms {

std::string_view to_string(ScheduleKind k) { return k == ScheduleKind::cosine ? "cosine" : "sqrt-cooldown"; }

ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "sqrt-cooldown") return ScheduleKind::sqrt_cooldown;
  if (s == "cosine") return ScheduleKind::cosine;
  throw DomainError("unknown schedule '" + std::string(s) + "' (expected sqrt-cooldown or cosine)");
}

void TrainConfig::validate() const {
  if (total_epochs == 0) throw DomainError("train: total_epochs must be positive");
  if (steps_per_epoch == 0) throw DomainError("train: steps_per_epoch must be positive");
  if (batch_size == 0) throw DomainError("train: batch_size must be positive");
  if (eval_batches == 0) throw DomainError("train: eval_batches must be positive");
  if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw DomainError("train: peak_lr must be positive");
  if (warmup_epochs + (schedule == ScheduleKind::sqrt_cooldown ? cooldown_epochs : 0) > total_epochs) {
    throw DomainError("train: warmup_epochs + cooldown_epochs (" + std::to_string(warmup_epochs) + " + " +
                      std::to_string(cooldown_epochs) + ") exceeds total_epochs " + std::to_string(total_epochs));
  }
  if (!(weight_decay >= 0.0)) throw DomainError("train: weight_decay must be non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw DomainError("train: betas must lie in (0, 1)");
  }
  if (!(eps > 0.0)) throw DomainError("train: eps must be positive");
  if (!(clip_norm >= 0.0)) throw DomainError("train: clip_norm must be non-negative");
}

double lr_at(const TrainConfig& c, std::size_t epoch, std::size_t step) {
  const double t = static_cast<double>(epoch) + static_cast<double>(step) / static_cast<double>(c.steps_per_epoch);
  const double total = static_cast<double>(c.total_epochs);
  const double warm = static_cast<double>(c.warmup_epochs);
  if (t < warm) return c.peak_lr * t / warm;
  if (c.schedule == ScheduleKind::cosine) {
    if (total <= warm) return c.peak_lr;
    const double x = (t - warm) / (total - warm);
    return c.peak_lr * (1.0 + std::cos(std::numbers::pi * x)) / 2.0;
  }
  const double cd = static_cast<double>(c.cooldown_epochs);
  const double start = total - cd;
  if (cd > 0.0 && t >= start) return c.peak_lr * std::sqrt(std::max(0.0, 1.0 - (t - start) / cd));
  return c.peak_lr;
}

// ------------------------------------------------------------------ AdamW

template <typename T>
AdamW<T>::AdamW(const std::vector<ParamRef<T>>& params, double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (const auto& p : params) {
    m_.emplace_back(p.rows, p.cols);
    v_.emplace_back(p.rows, p.cols);
  }
}

template <typename T>
std::optional<std::string> AdamW<T>::step(std::vector<ParamRef<T>>& params, const GradientSet<T>& grads, double lr) {
  if (params.size() != m_.size() || grads.tensors.size() != m_.size()) {
    throw ConsistencyError("adamw: " + std::to_string(params.size()) + " parameters, " +
                           std::to_string(grads.tensors.size()) + " gradients, " + std::to_string(m_.size()) +
                           " state tensors");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::optional<std::string> bad;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& g = grads.tensors[i];
    if (g.rows() != p.rows || g.cols() != p.cols || m_[i].rows() != p.rows || m_[i].cols() != p.cols) {
      throw ShapeError("adamw: shape mismatch at '" + p.name + "'");
    }
    T* m = m_[i].data().data();
    T* v = v_[i].data().data();
    const T* gd = g.data().data();
    T* w = p.value.data();
    const std::size_t n = p.value.size();
    const T b1 = static_cast<T>(beta1_);
    const T b2 = static_cast<T>(beta2_);
    const T step = static_cast<T>(lr / bc1);
    const T rbc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T e = static_cast<T>(eps_);
    const T decay = static_cast<T>(lr * weight_decay_);
    bool finite = true;
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * gd[j];
      v[j] = b2 * v[j] + (T(1) - b2) * gd[j] * gd[j];
      w[j] -= step * m[j] / (std::sqrt(v[j]) * rbc2 + e) + decay * w[j];
      finite = finite && std::isfinite(w[j]);
    }
    if (!finite && !bad) bad = p.name;
  }
  return bad;
}

template class AdamW<float>;
template class AdamW<double>;

// --------------------------------------------------------------- training

StepStats step_stats(const std::vector<double>& samples, std::size_t warm) {
  StepStats s;
  if (samples.size() <= warm) return s;
  std::vector<double> v(samples.begin() + static_cast<std::ptrdiff_t>(warm), samples.end());
  s.count = v.size();
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  s.median = v[mid];
  if (v.size() % 2 == 0) {
    s.median = (s.median + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid))) / 2.0;
  }
  return s;
}

Batch slice_batch(const Batch& b, std::size_t begin, std::size_t end) {
  if (begin >= end || end > b.size) throw DomainError("slice_batch: bad range");
  Batch out;
  out.size = end - begin;
  out.src_len = b.src_len;
  out.tgt_len = b.tgt_len;
  auto rows = [&](const std::vector<int>& v, std::size_t len) {
    return std::vector<int>(v.begin() + static_cast<std::ptrdiff_t>(begin * len),
                            v.begin() + static_cast<std::ptrdiff_t>(end * len));
  };
  out.src = rows(b.src, b.src_len);
  out.tgt_in = rows(b.tgt_in, b.tgt_len);
  out.tgt_out = rows(b.tgt_out, b.tgt_len);
  out.src_lengths.assign(b.src_lengths.begin() + static_cast<std::ptrdiff_t>(begin),
                         b.src_lengths.begin() + static_cast<std::ptrdiff_t>(end));
  out.tgt_lengths.assign(b.tgt_lengths.begin() + static_cast<std::ptrdiff_t>(begin),
                         b.tgt_lengths.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

namespace {

template <typename T>
struct StepResult {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t targets = 0;
  std::uint64_t activations = 0;
  GradientSet<T> grads;
};

// Forward and backward over `shards` slices of the batch, combined with
// weights proportional to each slice's target count.
template <typename T>
StepResult<T> loss_and_grads(const Model<T>& model, const Batch& batch, std::size_t shards) {
  shards = std::max<std::size_t>(1, std::min(shards, batch.size));
  if (shards == 1) {
    auto r = model.forward_loss(batch);
    StepResult<T> out{r.loss, r.correct, r.targets, r.cache.activation_elements(), model.backward(r.cache)};
    return out;
  }
  std::vector<StepResult<T>> parts(shards);
  parallel_for(shards, shards, [&](std::size_t i) {
    const std::size_t b0 = batch.size * i / shards;
    const std::size_t b1 = batch.size * (i + 1) / shards;
    auto r = model.forward_loss(slice_batch(batch, b0, b1));
    parts[i] = StepResult<T>{r.loss, r.correct, r.targets, r.cache.activation_elements(), model.backward(r.cache)};
  });
  StepResult<T> out;
  for (const auto& p : parts) out.targets += p.targets;
  out.grads = std::move(parts[0].grads);
  const double total = static_cast<double>(out.targets);
  out.grads.scale(static_cast<T>(static_cast<double>(parts[0].targets) / total));
  for (std::size_t i = 0; i < shards; ++i) {
    const double w = static_cast<double>(parts[i].targets) / total;
    out.loss += w * parts[i].loss;
    out.correct += parts[i].correct;
    out.activations += parts[i].activations;
    if (i == 0) continue;
    for (std::size_t k = 0; k < out.grads.tensors.size(); ++k) {
      auto dst = out.grads.tensors[k].data();
      auto src = parts[i].grads.tensors[k].data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += static_cast<T>(w) * src[j];
    }
  }
  return out;
}

std::string nonfinite_reason(const std::string& where) { return "non-finite value in " + where; }

}  // namespace

template <typename T>
EvalResult evaluate(const Model<T>& model, const SyntheticTask& task, std::size_t batches, std::size_t batch_size,
                    std::size_t threads) {
  std::vector<ForwardResult<T>> results(batches);
  parallel_for(batches, threads, [&](std::size_t i) {
    auto r = model.forward_loss(task.eval_batch(i, batch_size));
    r.cache = {};
    results[i] = std::move(r);
  });
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t targets = 0;
  for (const auto& r : results) {
    loss += r.loss * static_cast<double>(r.targets);
    correct += r.correct;
    targets += r.targets;
  }
  return {loss / static_cast<double>(targets), static_cast<double>(correct) / static_cast<double>(targets)};
}

std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch-%03zu.lrsm", epoch);
  return buf;
}

template <typename T>
RunRecord train(Model<T>& model, const SyntheticTask& task, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  task.validate();
  if (task.vocab != model.spec().vocab) throw ConsistencyError("train: task vocab differs from model vocab");
  if (task.seq_len > model.spec().max_seq) throw ConsistencyError("train: task sequences exceed model max_seq");

  // The training stream depends on both the task and the run seed; the
  // evaluation set depends on the task alone.
  SyntheticTask stream = task;
  stream.seed = derive_seed(task.seed, config.seed, 0x7261696eULL);

  RunRecord rec;
  rec.label = options.label;
  rec.parameter_count = model.parameter_count();

  auto write_checkpoint = [&](std::size_t epoch) {
    if (options.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(options.checkpoint_dir);
    const std::string stage = "epoch-" + checkpoint_name(epoch).substr(6, 3);
    save_checkpoint((std::filesystem::path(options.checkpoint_dir) / checkpoint_name(epoch)).string(),
                    make_checkpoint(model, stage));
  };
  auto diverge = [&](const std::string& why) {
    rec.diverged = true;
    rec.divergence_reason = why;
    throw DivergenceError("training diverged: " + why, rec);
  };

  write_checkpoint(0);
  auto params = model.parameters();
  AdamW<T> opt(params, config.beta1, config.beta2, config.eps, config.weight_decay);

  std::size_t over = 0;
  std::size_t steps_done = 0;
  std::uint64_t peak_activations = 0;
  for (std::size_t epoch = 0; epoch < config.total_epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t epoch_steps = 0;
    double lr = 0.0;
    for (std::size_t step = 0; step < config.steps_per_epoch; ++step) {
      if (options.max_steps && steps_done == options.max_steps) break;
      const Batch batch = stream.train_batch(epoch, step, config.batch_size);
      const auto t0 = std::chrono::steady_clock::now();
      StepResult<T> r;
      try {
        r = loss_and_grads(model, batch, options.threads);
      } catch (const NumericalError& e) {
        diverge(e.what());
      }
      if (!std::isfinite(r.loss)) diverge(nonfinite_reason("loss"));
      const double norm = r.grads.global_norm();
      if (!std::isfinite(norm)) diverge(nonfinite_reason("gradients"));
      if (config.clip_norm > 0.0 && norm > config.clip_norm) r.grads.scale(static_cast<T>(config.clip_norm / norm));
      lr = lr_at(config, epoch, step);
      if (auto bad = opt.step(params, r.grads, lr)) diverge(nonfinite_reason("parameter '" + *bad + "'"));
      model.mark_updated();
      const auto t1 = std::chrono::steady_clock::now();
      rec.step_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());

      if (steps_done == 0) rec.initial_loss = r.loss;
      peak_activations = std::max(peak_activations, r.activations);
      epoch_loss += r.loss;
      ++epoch_steps;
      ++steps_done;
    }
    if (epoch_steps == 0) break;

    EpochRecord e;
    e.epoch = epoch + 1;
    e.train_loss = epoch_loss / static_cast<double>(epoch_steps);
    e.lr = lr;
    const EvalResult ev = evaluate(model, task, config.eval_batches, config.batch_size, options.threads);
    e.eval_loss = ev.loss;
    e.eval_accuracy = ev.accuracy;
    rec.epochs.push_back(e);
    rec.final_eval_loss = ev.loss;
    rec.final_accuracy = ev.accuracy;
    rec.memory_bytes = memory_estimate<T>(rec.parameter_count, peak_activations);
    if (options.on_epoch) options.on_epoch(e);

    const bool last = epoch + 1 == config.total_epochs;
    if (last || (config.checkpoint_interval && (epoch + 1) % config.checkpoint_interval == 0)) {
      write_checkpoint(epoch + 1);
    }

    over = e.train_loss > 10.0 * rec.initial_loss ? over + 1 : 0;
    if (over >= 3) {
      diverge("epoch training loss above 10x the initial loss (" + format_double(rec.initial_loss) +
              ") for 3 consecutive epochs");
    }
  }
  return rec;
}

// --------------------------------------------------------------- CSV I/O

namespace {

std::string flag(bool b) { return b ? "1" : "0"; }

// Key/value pairs from "# key=value" lines; the reason may contain spaces
// but never newlines.
std::pair<std::string, std::string> comment_kv(std::string_view line) {
  line = trim(line.substr(1));
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) return {};
  return {std::string(line.substr(0, eq)), std::string(line.substr(eq + 1))};
}

std::string single_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

void write_record_csv(std::ostream& os, const RunRecord& r) {
  os << "# lrsms run record v1\n";
  os << "# label=" << single_line(r.label) << '\n';
  os << "# parameters=" << r.parameter_count << '\n';
  os << "# memory_estimate_bytes=" << r.memory_bytes << '\n';
  os << "# initial_loss=" << format_double(r.initial_loss) << '\n';
  os << "# final_eval_loss=" << format_double(r.final_eval_loss) << '\n';
  os << "# final_accuracy=" << format_double(r.final_accuracy) << '\n';
  os << "# diverged=" << flag(r.diverged) << '\n';
  os << "# divergence_reason=" << single_line(r.divergence_reason) << '\n';
  os << "epoch,train_loss,eval_loss,eval_accuracy,lr\n";
  for (const auto& e : r.epochs) {
    os << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.eval_loss) << ','
       << format_double(e.eval_accuracy) << ',' << format_double(e.lr) << '\n';
  }
}

RunRecord read_record_csv(std::istream& is) {
  RunRecord r;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      const auto [k, v] = comment_kv(line);
      if (k == "label") r.label = v;
      else if (k == "parameters") r.parameter_count = parse_size(v);
      else if (k == "memory_estimate_bytes") r.memory_bytes = parse_size(v);
      else if (k == "initial_loss") r.initial_loss = parse_double(v);
      else if (k == "final_eval_loss") r.final_eval_loss = parse_double(v);
      else if (k == "final_accuracy") r.final_accuracy = parse_double(v);
      else if (k == "diverged") r.diverged = v == "1";
      else if (k == "divergence_reason") r.divergence_reason = v;
      continue;
    }
    if (!header) {
      if (t != "epoch,train_loss,eval_loss,eval_accuracy,lr") {
        throw SchemaError("run record: unexpected header '" + std::string(t) + "'");
      }
      header = true;
      continue;
    }
    const auto f = split(t, ',');
    if (f.size() != 5) throw SchemaError("run record line " + std::to_string(lineno) + ": expected 5 fields");
    EpochRecord e{parse_size(f[0]), parse_double(f[1]), parse_double(f[2]), parse_double(f[3]), parse_double(f[4])};
    if (e.epoch != r.epochs.size() + 1) {
      throw SchemaError("run record line " + std::to_string(lineno) + ": epochs must count up from 1");
    }
    r.epochs.push_back(e);
  }
  if (!header) throw SchemaError("run record: missing header");
  return r;
}

void write_timing_csv(std::ostream& os, const RunRecord& r) {
  os << "step,seconds\n";
  for (std::size_t i = 0; i < r.step_seconds.size(); ++i) os << i << ',' << format_double(r.step_seconds[i]) << '\n';
}

// -------------------------------------------------------------- compare

template <typename T>
double measure_step_seconds(Model<T> model, const SyntheticTask& task, const TrainConfig& config, std::size_t warm,
                            std::size_t steps, std::size_t threads) {
  TrainConfig c = config;
  c.steps_per_epoch = std::max<std::size_t>(1, warm + steps);
  c.total_epochs = std::max<std::size_t>(c.total_epochs, c.warmup_epochs + c.cooldown_epochs + 1);
  TrainOptions o;
  o.threads = threads;
  o.max_steps = warm + steps;
  const RunRecord r = train(model, task, c, o);
  return step_stats(r.step_seconds, warm).median;
}

template <typename T>
std::vector<ComparisonRow> compare(const ModelSpec& spec, const SyntheticTask& task, const TrainConfig& config,
                                   const std::vector<ComparePlan>& plans, const CompareOptions& options) {
  if (plans.size() < 2) throw UsageError("compare: need at least 2 plans, got " + std::to_string(plans.size()));
  const auto baseline = std::find_if(plans.begin(), plans.end(), [](const ComparePlan& p) { return !p.plan; });
  if (baseline == plans.end()) throw UsageError("compare: the plans must include the full-rank model");
  const auto layers = enumerate_layers(spec);
  for (const auto& p : plans) {
    if (p.plan) check_plan_covers(*p.plan, layers);
  }

  std::vector<ComparisonRow> rows;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const auto& p = plans[i];
    Model<T> model = p.plan ? Model<T>::build(spec, *p.plan) : Model<T>::build_full_rank(spec);
    const Model<T> fresh = model;
    TrainOptions o;
    o.label = p.label;
    o.threads = options.threads;
    if (!options.checkpoint_root.empty()) {
      char dir[32];
      std::snprintf(dir, sizeof dir, "row-%02zu", i);
      o.checkpoint_dir = (std::filesystem::path(options.checkpoint_root) / dir).string();
    }
    RunRecord rec;
    try {
      rec = train(model, task, config, o);
    } catch (const DivergenceError& e) {
      rec = e.record();
    }
    ComparisonRow row;
    row.label = p.label;
    row.parameters = rec.parameter_count;
    row.memory_bytes = rec.memory_bytes;
    row.final_eval_loss = rec.final_eval_loss;
    row.final_accuracy = rec.final_accuracy;
    row.diverged = rec.diverged;
    if (rec.step_seconds.size() >= options.warm_steps + options.timed_steps) {
      row.step_seconds = step_stats(rec.step_seconds, options.warm_steps).median;
    } else {
      try {
        row.step_seconds =
            measure_step_seconds(fresh, task, config, options.warm_steps, options.timed_steps, options.threads);
      } catch (const DivergenceError&) {
        row.step_seconds = step_stats(rec.step_seconds, std::min(options.warm_steps, rec.step_seconds.size())).median;
      }
    }
    rows.push_back(row);
  }
  const ComparisonRow& base = rows[static_cast<std::size_t>(baseline - plans.begin())];
  for (auto& row : rows) {
    row.param_reduction = static_cast<double>(base.parameters) / static_cast<double>(row.parameters);
    row.speedup = row.step_seconds > 0.0 ? base.step_seconds / row.step_seconds : 0.0;
  }
  if (options.on_row) {
    for (const auto& row : rows) options.on_row(row);
  }
  return rows;
}

void write_comparison_csv(std::ostream& os, const std::vector<ComparisonRow>& rows) {
  os << "label,parameters,param_reduction,step_seconds,speedup,memory_estimate_bytes,final_eval_loss,final_accuracy,"
        "status\n";
  for (const auto& r : rows) {
    if (r.label.find_first_of(",\n") != std::string::npos) {
      throw DomainError("comparison label '" + r.label + "' contains a comma or newline");
    }
    os << r.label << ',' << r.parameters << ',' << format_double(r.param_reduction) << ','
       << format_double(r.step_seconds) << ',' << format_double(r.speedup) << ',' << r.memory_bytes << ','
       << format_double(r.final_eval_loss) << ',' << format_double(r.final_accuracy) << ','
       << (r.diverged ? "diverged" : "ok") << '\n';
  }
}

std::vector<ComparisonRow> read_comparison_csv(std::istream& is) {
  std::vector<ComparisonRow> rows;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty()) continue;
    if (!header) {
      if (t != "label,parameters,param_reduction,step_seconds,speedup,memory_estimate_bytes,final_eval_loss,"
               "final_accuracy,status") {
        throw SchemaError("comparison: unexpected header '" + std::string(t) + "'");
      }
      header = true;
      continue;
    }
    const auto f = split(t, ',');
    if (f.size() != 9) throw SchemaError("comparison line " + std::to_string(lineno) + ": expected 9 fields");
    if (f[8] != "ok" && f[8] != "diverged") {
      throw SchemaError("comparison line " + std::to_string(lineno) + ": status must be ok or diverged");
    }
    ComparisonRow r;
    r.label = std::string(f[0]);
    r.parameters = parse_size(f[1]);
    r.param_reduction = parse_double(f[2]);
    r.step_seconds = parse_double(f[3]);
    r.speedup = parse_double(f[4]);
    r.memory_bytes = parse_size(f[5]);
    r.final_eval_loss = parse_double(f[6]);
    r.final_accuracy = parse_double(f[7]);
    r.diverged = f[8] == "diverged";
    rows.push_back(std::move(r));
  }
  if (!header) throw SchemaError("comparison: missing header");
  return rows;
}

#define LRSMS_INSTANTIATE(T)                                                                                    \
  template EvalResult evaluate<T>(const Model<T>&, const SyntheticTask&, std::size_t, std::size_t, std::size_t); \
  template RunRecord train<T>(Model<T>&, const SyntheticTask&, const TrainConfig&, const TrainOptions&);         \
  template double measure_step_seconds<T>(Model<T>, const SyntheticTask&, const TrainConfig&, std::size_t,        \
                                          std::size_t, std::size_t);                                              \
  template std::vector<ComparisonRow> compare<T>(const ModelSpec&, const SyntheticTask&, const TrainConfig&,      \
                                                 const std::vector<ComparePlan>&, const CompareOptions&);

LRSMS_INSTANTIATE(float)
LRSMS_INSTANTIATE(double)

#undef LRSMS_INSTANTIATE

}  // namespace lrsms
