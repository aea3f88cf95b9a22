// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

// AdamW training loop, learning-rate schedules, and the full-rank versus
// low-rank comparison harness.

#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lrsms/model.hpp"

namespace lrsms {

enum class ScheduleKind : std::uint8_t { sqrt_cooldown, cosine };
std::string_view to_string(ScheduleKind k);
ScheduleKind parse_schedule_kind(std::string_view s);

struct TrainConfig {
  double peak_lr = 3e-4;
  std::size_t warmup_epochs = 2;
  std::size_t total_epochs = 30;
  std::size_t cooldown_epochs = 6;  // sqrt_cooldown only
  ScheduleKind schedule = ScheduleKind::sqrt_cooldown;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double clip_norm = 1.0;  // 0 disables clipping
  std::size_t batch_size = 64;
  std::size_t steps_per_epoch = 20;
  std::size_t eval_batches = 4;
  std::uint64_t seed = 0;               // data order
  std::size_t checkpoint_interval = 0;  // epochs; 0 writes only init and final

  void validate() const;
  std::size_t total_steps() const { return total_epochs * steps_per_epoch; }
};

// Rate for `step` (0-based, within the epoch) of `epoch`. Time is measured
// in fractional epochs t = epoch + step / steps_per_epoch:
//   t < W                  peak * t / W
//   sqrt_cooldown, t >= T-C peak * sqrt(1 - (t - (T-C)) / C)
//   cosine, t >= W         peak * (1 + cos(pi * (t - W) / (T - W))) / 2
// and peak otherwise.
double lr_at(const TrainConfig& config, std::size_t epoch, std::size_t step);

// Decoupled weight decay; the decay is scaled by the learning rate too, so
// a zero rate freezes the parameters.
template <typename T>
class AdamW {
 public:
  AdamW(const std::vector<ParamRef<T>>& params, double beta1, double beta2, double eps, double weight_decay);

  // Returns the name of the first tensor that became non-finite, if any.
  std::optional<std::string> step(std::vector<ParamRef<T>>& params, const GradientSet<T>& grads, double lr);

  std::size_t steps() const noexcept { return t_; }
  const std::vector<BasicMatrix<T>>& first_moment() const noexcept { return m_; }
  const std::vector<BasicMatrix<T>>& second_moment() const noexcept { return v_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<BasicMatrix<T>> m_;
  std::vector<BasicMatrix<T>> v_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
  double lr = 0.0;  // rate at the last step of the epoch

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct StepStats {
  std::size_t count = 0;
  double median = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

// Median and friends over samples[warm:].
StepStats step_stats(const std::vector<double>& samples, std::size_t warm = 0);

struct RunRecord {
  std::string label;
  std::size_t parameter_count = 0;
  std::uint64_t memory_bytes = 0;  // estimated
  double initial_loss = 0.0;
  double final_eval_loss = 0.0;
  double final_accuracy = 0.0;
  bool diverged = false;
  std::string divergence_reason;
  std::vector<EpochRecord> epochs;
  std::vector<double> step_seconds;  // wall clock; kept out of the record CSV

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, RunRecord record) : Error(what), record_(std::move(record)) {}
  const RunRecord& record() const noexcept { return record_; }

 private:
  RunRecord record_;
};

// Parameters, gradients and both Adam moments, plus one step's activations.
template <typename T>
std::uint64_t memory_estimate(std::size_t parameters, std::uint64_t activation_elements) {
  return static_cast<std::uint64_t>(parameters) * sizeof(T) * 4 + activation_elements * sizeof(T);
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

template <typename T>
EvalResult evaluate(const Model<T>& model, const SyntheticTask& task, std::size_t batches, std::size_t batch_size,
                    std::size_t threads = 1);

// Sequences [begin, end) of a batch.
Batch slice_batch(const Batch& b, std::size_t begin, std::size_t end);

struct TrainOptions {
  std::string label;
  std::string checkpoint_dir;  // empty: no checkpoints
  std::size_t threads = 1;     // batch shards per step
  std::size_t max_steps = 0;   // stop early after this many steps (0: run all)
  std::function<void(const EpochRecord&)> on_epoch;
};

// Checkpoints are named epoch-NNN.lrsm; epoch-000 holds the initial model.
// Throws DivergenceError on a non-finite loss or parameter, or when the
// epoch training loss exceeds 10x the first step's loss for 3 consecutive
// epochs.
template <typename T>
RunRecord train(Model<T>& model, const SyntheticTask& task, const TrainConfig& config,
                const TrainOptions& options = {});

std::string checkpoint_name(std::size_t epoch);

// Record CSV: "# key=value" summary lines, then
// epoch,train_loss,eval_loss,eval_accuracy,lr
void write_record_csv(std::ostream& os, const RunRecord& record);
RunRecord read_record_csv(std::istream& is);
// step,seconds
void write_timing_csv(std::ostream& os, const RunRecord& record);

struct ComparePlan {
  std::string label;
  std::optional<RankPlan> plan;  // nullopt: full rank
};

struct ComparisonRow {
  std::string label;
  std::size_t parameters = 0;
  double param_reduction = 0.0;  // full-rank parameters / parameters
  double step_seconds = 0.0;     // median
  double speedup = 0.0;          // full-rank median / median
  std::uint64_t memory_bytes = 0;
  double final_eval_loss = 0.0;
  double final_accuracy = 0.0;
  bool diverged = false;

  friend bool operator==(const ComparisonRow&, const ComparisonRow&) = default;
};

struct CompareOptions {
  std::size_t warm_steps = 10;
  std::size_t timed_steps = 100;
  std::string checkpoint_root;  // per-row subdirectories when set
  std::size_t threads = 1;
  std::function<void(const ComparisonRow&)> on_row;
};

// Trains every plan with the same seeds and data order, in input order.
// Speed-ups are relative to the first full-rank entry. A diverging member is
// flagged and the comparison carries on. Step times come from training when
// it runs at least warm + timed steps, else from a separate timing run.
template <typename T>
std::vector<ComparisonRow> compare(const ModelSpec& spec, const SyntheticTask& task, const TrainConfig& config,
                                   const std::vector<ComparePlan>& plans, const CompareOptions& options = {});

// Median step time of `steps` training steps after `warm` unmeasured ones.
template <typename T>
double measure_step_seconds(Model<T> model, const SyntheticTask& task, const TrainConfig& config, std::size_t warm,
                            std::size_t steps, std::size_t threads = 1);

// label,parameters,param_reduction,step_seconds,speedup,memory_estimate_bytes,
// final_eval_loss,final_accuracy,status
void write_comparison_csv(std::ostream& os, const std::vector<ComparisonRow>& rows);
std::vector<ComparisonRow> read_comparison_csv(std::istream& is);

}  // namespace lrsms
