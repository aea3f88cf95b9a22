// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrsms/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "lrsms/checkpoint.hpp"
#include "lrsms/config.hpp"
#include "lrsms/parallel.hpp"
#include "lrsms/spectrum.hpp"
#include "lrsms/text.hpp"
#include "lrsms/trainer.hpp"

namespace lrsms {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string precision = "float";
};

RunConfig load_config(const Common& c) {
  RunConfig rc = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.config.empty()) rc.task.vocab = rc.model.vocab;
  if (c.seed) {
    rc.model.seed = *c.seed;
    rc.train.seed = *c.seed;
  }
  return rc;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw UsageError("cannot write '" + p.string() + "'");
  return os;
}

void print_plan_warnings(const RankPlan& plan, const PlanSummary& s) {
  bool alpha_one = false;
  for (const auto& [id, e] : plan.entries) alpha_one = alpha_one || (e.factorized && e.alpha >= 1.0);
  if (alpha_one) {
    std::cerr << "warning: alpha = 1 keeps full rank in two factors, which inflates those layers' parameters\n";
  }
  if (s.layer_planned > s.layer_dense) {
    std::cerr << "warning: the plan has more layer parameters than the dense model (" << s.layer_planned << " > "
              << s.layer_dense << ")\n";
  }
}

// Plan from the command line or the config's [rank] section; nullopt means
// full rank.
std::optional<RankPlan> resolve_plan(const RunConfig& rc, const std::string& plan_file, bool full_rank) {
  const auto layers = enumerate_layers(rc.model);
  if (full_rank) return std::nullopt;
  RankPlan plan;
  if (!plan_file.empty()) {
    plan = load_plan(plan_file);
  } else if (rc.plan_path) {
    plan = load_plan(*rc.plan_path);
  } else if (rc.gamma) {
    plan = linear_plan(layers, *rc.gamma);
  } else if (rc.uniform) {
    plan = uniform_plan(layers, *rc.uniform);
  } else {
    throw UsageError("train: give --plan or --full-rank (or a [rank] section in the config)");
  }
  check_plan_covers(plan, layers);
  return plan;
}

template <typename T>
int do_train(const RunConfig& rc, const std::optional<RankPlan>& plan, const fs::path& out) {
  Model<T> model = plan ? Model<T>::build(rc.model, *plan) : Model<T>::build_full_rank(rc.model);
  fs::create_directories(out);
  {
    auto os = open_out(out / "plan.txt");
    write_plan(os, plan ? *plan : full_rank_plan(enumerate_layers(rc.model)));
  }
  {
    auto os = open_out(out / "config.ini");
    write_run_config(os, rc);
  }
  TrainOptions opts;
  opts.label = plan ? "low-rank" : "full-rank";
  opts.checkpoint_dir = (out / "checkpoints").string();
  opts.threads = thread_budget();
  opts.on_epoch = [&](const EpochRecord& e) {
    std::cout << "epoch " << e.epoch << "/" << rc.train.total_epochs << "  train_loss " << format_double(e.train_loss)
              << "  eval_loss " << format_double(e.eval_loss) << "  eval_acc " << format_double(e.eval_accuracy)
              << "  lr " << format_double(e.lr) << std::endl;
  };
  std::cout << "parameters " << model.parameter_count() << std::endl;

  RunRecord rec;
  int code = kExitOk;
  try {
    rec = train(model, rc.task, rc.train, opts);
  } catch (const DivergenceError& e) {
    rec = e.record();
    std::cerr << "error: " << e.what() << "\n";
    code = kExitDivergence;
  }
  {
    auto os = open_out(out / "record.csv");
    write_record_csv(os, rec);
  }
  {
    auto os = open_out(out / "timing.csv");
    write_timing_csv(os, rec);
  }
  const StepStats st = step_stats(rec.step_seconds, std::min<std::size_t>(10, rec.step_seconds.size() / 2));
  std::cout << "final accuracy " << format_double(rec.final_accuracy) << "  median step " << format_double(st.median)
            << " s  estimated memory " << rec.memory_bytes << " bytes" << std::endl;
  return code;
}

Checkpoint load_named(const std::string& path) {
  try {
    return load_checkpoint(path);
  } catch (const ChecksumError& e) {
    throw ChecksumError(path + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.offset());
  } catch (const SchemaError& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

template <typename T>
std::vector<ComparisonRow> do_compare(const RunConfig& rc, const std::vector<ComparePlan>& plans,
                                      std::size_t timed_steps) {
  CompareOptions o;
  o.threads = thread_budget();
  o.timed_steps = timed_steps;
  o.on_row = [](const ComparisonRow& r) {
    std::cout << r.label << "  params " << r.parameters << "  speedup " << format_double(r.speedup) << "  acc "
              << format_double(r.final_accuracy) << (r.diverged ? "  DIVERGED" : "") << std::endl;
  };
  return compare<T>(rc.model, rc.task, rc.train, plans, o);
}

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "INI run configuration");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "Override the model and data-order seeds");
  cmd->add_option("--precision", c.precision, "Training precision")->check(CLI::IsMember({"float", "double"}));
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Low-rank factorized transformer toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "lrsms 1.0.0");

  // plan
  Common plan_c;
  std::optional<double> plan_uniform;
  std::string plan_gamma;
  std::string plan_out;
  auto* plan_cmd = app.add_subcommand("plan", "Write a rank plan and print its parameter summary");
  add_common(plan_cmd, plan_c, false);
  plan_cmd->add_option("--uniform", plan_uniform, "Uniform scaling factor alpha");
  plan_cmd->add_option("--gamma", plan_gamma, "Linear ranges mhsa_start,mhsa_end,ffn_start,ffn_end");
  plan_cmd->add_option("--out", plan_out, "Plan file to write")->required();

  // train
  Common train_c;
  std::string train_plan;
  bool train_full = false;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints and a run record");
  add_common(train_cmd, train_c, true);
  auto* train_plan_opt = train_cmd->add_option("--plan", train_plan, "Rank plan file");
  train_cmd->add_flag("--full-rank", train_full, "Train the dense model")->excludes(train_plan_opt);
  train_cmd->add_option("--out", train_out, "Output directory (default: [output] dir)");

  // analyze
  std::vector<std::string> an_ckpts;
  double an_threshold = 0.95;
  std::string an_energy = "frobenius";
  std::string an_out;
  std::string an_suggest;
  auto* an_cmd = app.add_subcommand("analyze", "Effective-rank report of checkpoint weights");
  an_cmd->add_option("--ckpt", an_ckpts, "Checkpoint files, in stage order")->required()->expected(1, -1);
  an_cmd->add_option("--threshold", an_threshold, "Energy share");
  an_cmd->add_option("--energy", an_energy, "frobenius or nuclear");
  an_cmd->add_option("--out", an_out, "Report CSV")->required();
  an_cmd->add_option("--suggest-gamma", an_suggest, "Also write a plan fitted to the last checkpoint's trend");

  // compare
  Common cmp_c;
  std::vector<std::string> cmp_plans;
  bool cmp_full = false;
  std::string cmp_out;
  std::size_t cmp_timed = 100;
  auto* cmp_cmd = app.add_subcommand("compare", "Train several plans on identical data and tabulate them");
  add_common(cmp_cmd, cmp_c, true);
  cmp_cmd->add_option("--plans", cmp_plans, "Rank plan files")->expected(0, -1);
  cmp_cmd->add_flag("--full-rank", cmp_full, "Include the dense baseline (required)");
  cmp_cmd->add_option("--out", cmp_out, "Output directory")->required();
  cmp_cmd->add_option("--timed-steps", cmp_timed, "Steps in the step-time median");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*plan_cmd) {
      if (plan_uniform.has_value() == !plan_gamma.empty()) {
        throw UsageError("plan: give exactly one of --uniform or --gamma");
      }
      const RunConfig rc = load_config(plan_c);
      const auto layers = enumerate_layers(rc.model);
      const RankPlan plan =
          plan_uniform ? uniform_plan(layers, *plan_uniform) : linear_plan(layers, ScalingRanges::parse(plan_gamma));
      const std::string comment = plan_uniform ? "uniform " + format_double(*plan_uniform) : "gamma " + plan_gamma;
      save_plan(plan_out, plan, comment);
      const PlanSummary s = plan_summary(plan, layers, fixed_param_count(rc.model));
      print_summary(std::cout, s);
      print_plan_warnings(plan, s);
      return kExitOk;
    }

    if (*train_cmd) {
      const RunConfig rc = load_config(train_c);
      const auto plan = resolve_plan(rc, train_plan, train_full);
      const std::string out = !train_out.empty() ? train_out : rc.out_dir;
      if (out.empty()) throw UsageError("train: give --out or an [output] dir in the config");
      return train_c.precision == "double" ? do_train<double>(rc, plan, out) : do_train<float>(rc, plan, out);
    }

    if (*an_cmd) {
      const Energy energy = parse_energy(an_energy);
      std::vector<Checkpoint> ckpts;
      for (const auto& p : an_ckpts) ckpts.push_back(load_named(p));
      const RankRatioReport report = analyze_checkpoints(ckpts, an_threshold, energy, thread_budget());
      {
        auto os = open_out(an_out);
        write_report_csv(os, report);
      }
      std::cout << "layers " << report.records.size() << "  mean ratio " << format_double(report.mean_ratio())
                << std::endl;
      if (!an_suggest.empty()) {
        const ScalingRanges gamma = suggest_gamma(report);
        const auto layers = enumerate_layers(ckpts.back().spec());
        save_plan(an_suggest, linear_plan(layers, gamma), "suggested gamma " + gamma.to_string());
        std::cout << "suggested gamma " << gamma.to_string() << std::endl;
      }
      return kExitOk;
    }

    if (*cmp_cmd) {
      const RunConfig rc = load_config(cmp_c);
      if (!cmp_full) throw UsageError("compare: --full-rank is required (it is the speed-up baseline)");
      std::vector<ComparePlan> plans{{"full-rank", std::nullopt}};
      for (const auto& p : cmp_plans) plans.push_back({fs::path(p).stem().string(), load_plan(p)});
      const auto rows = cmp_c.precision == "double" ? do_compare<double>(rc, plans, cmp_timed)
                                                    : do_compare<float>(rc, plans, cmp_timed);
      fs::create_directories(cmp_out);
      {
        auto os = open_out(fs::path(cmp_out) / "comparison.csv");
        write_comparison_csv(os, rows);
      }
      const bool all_diverged = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.diverged; });
      return all_diverged ? kExitAllDiverged : kExitOk;
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const ChecksumError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCorrupt;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << " (byte " << e.offset() << ")\n";
    return kExitCorrupt;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCorrupt;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const Error& e) {
    // usage, domain, shape and consistency errors
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace lrsms
