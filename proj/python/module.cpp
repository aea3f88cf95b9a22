// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

// Python bindings: linear algebra, rank planning, spectrum analysis,
// checkpoints, model loss, training and the CLI entry point.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "lrsms/checkpoint.hpp"
#include "lrsms/cli.hpp"
#include "lrsms/parallel.hpp"
#include "lrsms/spectrum.hpp"
#include "lrsms/trainer.hpp"

namespace py = pybind11;
using namespace lrsms;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array, got " + std::to_string(a.ndim()) + " dimensions");
  const auto m = static_cast<std::size_t>(a.shape(0));
  const auto n = static_cast<std::size_t>(a.shape(1));
  return Matrix(m, n, std::vector<double>(a.data(), a.data() + m * n));
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

std::string plan_text(const RankPlan& p) {
  std::ostringstream os;
  write_plan(os, p);
  return os.str();
}

RankPlan plan_from_text(const std::string& text) {
  std::istringstream is(text);
  return read_plan(is);
}

ModelSpec spec_from(const py::dict& d) {
  ModelSpec s;
  for (const auto& [k, v] : d) {
    const auto key = k.cast<std::string>();
    if (key == "seed") {
      s.seed = v.cast<std::uint64_t>();
      continue;
    }
    const auto val = v.cast<std::size_t>();
    if (key == "d_model") s.d_model = val;
    else if (key == "n_heads") s.n_heads = val;
    else if (key == "d_ffn") s.d_ffn = val;
    else if (key == "encoder_blocks") s.encoder_blocks = val;
    else if (key == "decoder_blocks") s.decoder_blocks = val;
    else if (key == "vocab") s.vocab = val;
    else if (key == "max_seq") s.max_seq = val;
    else throw UsageError("unknown model spec key '" + key + "'");
  }
  s.validate();
  return s;
}

py::dict spec_dict(const ModelSpec& s) {
  py::dict d;
  d["d_model"] = s.d_model;
  d["n_heads"] = s.n_heads;
  d["d_ffn"] = s.d_ffn;
  d["encoder_blocks"] = s.encoder_blocks;
  d["decoder_blocks"] = s.decoder_blocks;
  d["vocab"] = s.vocab;
  d["max_seq"] = s.max_seq;
  d["seed"] = s.seed;
  return d;
}

RankPlan make_plan(const ModelSpec& spec, const py::object& gamma, const py::object& uniform) {
  const auto layers = enumerate_layers(spec);
  if (!gamma.is_none() && !uniform.is_none()) throw UsageError("pass gamma or uniform, not both");
  if (!gamma.is_none()) return linear_plan(layers, ScalingRanges::parse(gamma.cast<std::string>()));
  if (!uniform.is_none()) return uniform_plan(layers, uniform.cast<double>());
  return full_rank_plan(layers);
}

SyntheticTask task_for(const ModelSpec& spec, const std::string& kind, std::uint64_t seed) {
  SyntheticTask t;
  t.kind = parse_task_kind(kind);
  t.seq_len = spec.max_seq;
  t.min_len = spec.max_seq;
  t.vocab = spec.vocab;
  t.seed = seed;
  return t;
}

py::dict record_dict(const RunRecord& r) {
  py::dict d;
  d["label"] = r.label;
  d["parameter_count"] = r.parameter_count;
  d["memory_bytes"] = r.memory_bytes;
  d["initial_loss"] = r.initial_loss;
  d["final_eval_loss"] = r.final_eval_loss;
  d["final_accuracy"] = r.final_accuracy;
  d["diverged"] = r.diverged;
  d["divergence_reason"] = r.divergence_reason;
  py::list epochs;
  for (const auto& e : r.epochs) {
    py::dict x;
    x["epoch"] = e.epoch;
    x["train_loss"] = e.train_loss;
    x["eval_loss"] = e.eval_loss;
    x["eval_accuracy"] = e.eval_accuracy;
    x["lr"] = e.lr;
    epochs.append(x);
  }
  d["epochs"] = epochs;
  d["step_seconds"] = r.step_seconds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Low-rank factorized transformer training: native core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<ConsistencyError>(m, "ConsistencyError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<ChecksumError>(m, "ChecksumError", PyExc_IOError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_IOError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_IOError);

  m.def(
      "svd",
      [](const Array& w) {
        const auto s = svd(to_matrix(w));
        py::array_t<double> sigma(std::vector<py::ssize_t>{static_cast<py::ssize_t>(s.sigma.size())});
        std::copy(s.sigma.begin(), s.sigma.end(), sigma.mutable_data());
        return py::make_tuple(to_array(s.u), sigma, to_array(s.vt));
      },
      py::arg("w"), "Thin SVD (u, sigma, vt) with non-increasing sigma.");
  m.def(
      "spectral_init",
      [](const Array& w, std::size_t rank) {
        const auto l = spectral_init(to_matrix(w), rank);
        return py::make_tuple(to_array(l.u()), to_array(l.v()));
      },
      py::arg("w"), py::arg("rank"), "Factors (u, v) with u @ v.T the best rank-r approximation of w.");
  m.def(
      "k95", [](const Array& w, double threshold, const std::string& energy) {
        return k95(to_matrix(w), threshold, parse_energy(energy));
      },
      py::arg("w"), py::arg("threshold") = 0.95, py::arg("energy") = "frobenius");
  m.def("rank_for", &rank_for, py::arg("alpha"), py::arg("m"), py::arg("n"));
  m.def("linear_alpha", &linear_alpha, py::arg("block"), py::arg("blocks"), py::arg("start"), py::arg("end"));

  m.def(
      "default_spec", [] { return spec_dict(ModelSpec{}); }, "The default desk-scale model spec as a dict.");
  m.def(
      "make_plan",
      [](const py::dict& spec, const py::object& gamma, const py::object& uniform) {
        return plan_text(make_plan(spec_from(spec), gamma, uniform));
      },
      py::arg("spec") = py::dict(), py::arg("gamma") = py::none(), py::arg("uniform") = py::none(),
      "Plan text for a linear (gamma='a,b,c,d'), uniform or full-rank plan.");
  m.def(
      "plan_summary",
      [](const py::dict& spec, const std::string& plan) {
        const ModelSpec s = spec_from(spec);
        const auto layers = enumerate_layers(s);
        const PlanSummary sum = plan_summary(plan_from_text(plan), layers, fixed_param_count(s));
        py::dict d;
        d["total_dense"] = sum.total_dense();
        d["total_planned"] = sum.total_planned();
        d["mhsa_planned"] = sum.mhsa.planned;
        d["ffn_planned"] = sum.ffn.planned;
        d["fixed"] = sum.fixed;
        d["compression"] = sum.compression();
        return d;
      },
      py::arg("spec"), py::arg("plan"));

  m.def(
      "untrained_loss",
      [](const py::dict& spec, const std::string& plan, const std::string& task, std::size_t batch_size) {
        const ModelSpec s = spec_from(spec);
        const auto model = Model<double>::build(s, plan_from_text(plan));
        return model.forward_loss(task_for(s, task, s.seed).eval_batch(0, batch_size)).loss;
      },
      py::arg("spec"), py::arg("plan"), py::arg("task") = "copy", py::arg("batch_size") = 8,
      "Mean cross-entropy of a freshly built model on one evaluation batch.");
  m.def(
      "train",
      [](const py::dict& spec, const std::string& plan, const std::string& task, std::size_t epochs,
         std::size_t steps_per_epoch, std::size_t batch_size, double peak_lr, const std::string& checkpoint_dir) {
        const ModelSpec s = spec_from(spec);
        TrainConfig c;
        c.total_epochs = epochs;
        c.warmup_epochs = std::min<std::size_t>(c.warmup_epochs, epochs / 3);
        c.cooldown_epochs = std::min<std::size_t>(c.cooldown_epochs, epochs / 3);
        c.steps_per_epoch = steps_per_epoch;
        c.batch_size = batch_size;
        c.peak_lr = peak_lr;
        c.seed = s.seed;
        c.validate();
        TrainOptions opt;
        opt.checkpoint_dir = checkpoint_dir;
        opt.threads = thread_budget();
        auto model = Model<float>::build(s, plan_from_text(plan));
        py::gil_scoped_release release;
        RunRecord r;
        try {
          r = train(model, task_for(s, task, s.seed), c, opt);
        } catch (const DivergenceError& e) {
          r = e.record();
        }
        py::gil_scoped_acquire acquire;
        return record_dict(r);
      },
      py::arg("spec"), py::arg("plan"), py::arg("task") = "copy", py::arg("epochs") = 30,
      py::arg("steps_per_epoch") = 20, py::arg("batch_size") = 64, py::arg("peak_lr") = 3e-4,
      py::arg("checkpoint_dir") = "", "Train a float model; returns the run record as a dict.");

  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        const Checkpoint c = load_checkpoint(path);
        py::dict tensors;
        for (const auto& t : c.tensors) tensors[py::str(t.name)] = to_array(t.matrix());
        return py::make_tuple(spec_dict(c.spec()), c.stage(), tensors);
      },
      py::arg("path"), "(spec, stage, {name: array}) from an .lrsm file.");
  m.def(
      "analyze",
      [](const std::vector<std::string>& paths, double threshold, const std::string& energy) {
        std::vector<Checkpoint> ckpts;
        for (const auto& p : paths) ckpts.push_back(load_checkpoint(p));
        const auto report = analyze_checkpoints(ckpts, threshold, parse_energy(energy), thread_budget());
        py::list rows;
        for (const auto& r : report.records) {
          py::dict d;
          d["stage"] = r.stage;
          d["layer"] = r.layer;
          d["kind"] = std::string(to_string(r.kind));
          d["submodel"] = std::string(to_string(r.submodel));
          d["block"] = r.block;
          d["k95"] = r.k95;
          d["ktotal"] = r.ktotal;
          d["ratio"] = r.ratio;
          rows.append(d);
        }
        return rows;
      },
      py::arg("paths"), py::arg("threshold") = 0.95, py::arg("energy") = "frobenius");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "lrsms");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        return run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Run the lrsms command line in-process; returns the exit code.");
}
