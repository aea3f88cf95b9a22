// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

// INI run configuration:
//
//   [model]   d_model n_heads d_ffn encoder_blocks decoder_blocks vocab max_seq seed
//   [task]    kind seq_len min_len seed
//   [train]   peak_lr warmup_epochs total_epochs cooldown_epochs schedule
//             weight_decay beta1 beta2 eps clip_norm batch_size
//             steps_per_epoch eval_batches seed checkpoint_interval
//   [rank]    gamma = a,b,c,d  |  uniform = alpha  |  plan = path
//   [output]  dir = path
//
// Every section and key is optional; unknown ones are rejected. Paths are
// resolved relative to the file's directory. Lines starting with ';' or '#'
// are comments.

#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "lrsms/model.hpp"
#include "lrsms/rank_plan.hpp"
#include "lrsms/trainer.hpp"

namespace lrsms {

struct RunConfig {
  ModelSpec model;
  SyntheticTask task;  // vocab follows model.vocab
  TrainConfig train;
  std::optional<ScalingRanges> gamma;
  std::optional<double> uniform;
  std::optional<std::string> plan_path;
  std::string out_dir;

  // Throws UsageError describing the first invalid setting.
  void validate() const;
};

// Throws UsageError naming the offending section/key or line.
RunConfig parse_run_config(std::istream& is, const std::string& base_dir);
RunConfig load_run_config(const std::string& path);
void write_run_config(std::ostream& os, const RunConfig& config);

}  // namespace lrsms
