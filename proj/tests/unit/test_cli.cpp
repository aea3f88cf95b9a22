// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

// Drives the built lrsms binary and checks exit codes and outputs.

#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lrsms/checkpoint.hpp"
#include "lrsms/cli.hpp"
#include "lrsms/rank_plan.hpp"
#include "lrsms/spectrum.hpp"
#include "lrsms/trainer.hpp"

namespace fs = std::filesystem;
using namespace lrsms;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(LRSMS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "lrsms-test-cli";
    fs::remove_all(d);
    fs::create_directories(d);
    std::ofstream(d / "tiny.ini") << "[model]\nd_model = 16\nn_heads = 2\nd_ffn = 32\nencoder_blocks = 2\n"
                                     "decoder_blocks = 1\nvocab = 10\nmax_seq = 6\n"
                                     "[train]\ntotal_epochs = 2\nwarmup_epochs = 1\ncooldown_epochs = 1\n"
                                     "steps_per_epoch = 3\nbatch_size = 4\neval_batches = 1\npeak_lr = 1e-3\n";
    std::ofstream(d / "blowup.ini") << "[model]\nd_model = 16\nn_heads = 2\nd_ffn = 32\nencoder_blocks = 2\n"
                                       "decoder_blocks = 1\nvocab = 10\nmax_seq = 6\n"
                                       "[train]\ntotal_epochs = 2\nwarmup_epochs = 0\ncooldown_epochs = 0\n"
                                       "steps_per_epoch = 3\nbatch_size = 4\neval_batches = 1\n"
                                       "peak_lr = 1e300\nclip_norm = 0\n";
    return d;
  }();
  return dir;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 2") {
    const auto d = workdir();
    CHECK(run("") == kExitUsage);
    CHECK(run("frobnicate") == kExitUsage);
    CHECK(run("plan --gamma 0.5,0.1,0.1,0.2 --out " + q(d / "p.txt")) == kExitUsage);
    CHECK(run("plan --gamma 0.1,0.2,0.1,0.2 --uniform 0.3 --out " + q(d / "p.txt")) == kExitUsage);
    CHECK(run("train --config " + q(d / "missing.ini")) == kExitUsage);
    CHECK(run("analyze --ckpt " + q(d / "missing.lrsm") + " --out " + q(d / "r.csv")) == kExitUsage);
    CHECK(run("compare --config " + q(d / "tiny.ini") + " --plans " + q(d / "p.txt") + " --out " + q(d / "cmp")) ==
          kExitUsage);
  }

  TEST_CASE("plan writes a loadable plan") {
    const auto d = workdir();
    REQUIRE(run("plan --config " + q(d / "tiny.ini") + " --gamma 0.1,0.2,0.2,0.5 --out " + q(d / "plan.txt")) ==
            kExitOk);
    const RankPlan p = load_plan((d / "plan.txt").string());
    ModelSpec s;
    s.d_model = 16;
    s.n_heads = 2;
    s.d_ffn = 32;
    s.encoder_blocks = 2;
    s.decoder_blocks = 1;
    s.vocab = 10;
    s.max_seq = 6;
    CHECK(p == linear_plan(enumerate_layers(s), ScalingRanges{0.1, 0.2, 0.2, 0.5}));
  }

  TEST_CASE("train, analyze and compare") {
    const auto d = workdir();
    REQUIRE(run("plan --config " + q(d / "tiny.ini") + " --uniform 0.5 --out " + q(d / "half.txt")) == kExitOk);
    REQUIRE(run("train --config " + q(d / "tiny.ini") + " --plan " + q(d / "half.txt") + " --out " + q(d / "run")) ==
            kExitOk);
    for (const char* f : {"record.csv", "timing.csv", "plan.txt", "config.ini", "checkpoints/epoch-000.lrsm",
                          "checkpoints/epoch-002.lrsm"}) {
      CAPTURE(f);
      CHECK(fs::exists(d / "run" / f));
    }
    std::ifstream rec(d / "run" / "record.csv");
    CHECK(read_record_csv(rec).epochs.size() == 2);

    REQUIRE(run("analyze --ckpt " + q(d / "run/checkpoints/epoch-000.lrsm") + " " +
                q(d / "run/checkpoints/epoch-002.lrsm") + " --out " + q(d / "report.csv") + " --suggest-gamma " +
                q(d / "suggested.txt")) == kExitOk);
    std::ifstream rep(d / "report.csv");
    const auto report = read_report_csv(rep);
    CHECK(report.records.size() == 2 * 22);
    CHECK(fs::exists(d / "suggested.txt"));

    REQUIRE(run("compare --config " + q(d / "tiny.ini") + " --plans " + q(d / "half.txt") + " --full-rank --out " +
                q(d / "cmp") + " --timed-steps 2") == kExitOk);
    std::ifstream cmp(d / "cmp" / "comparison.csv");
    const auto rows = read_comparison_csv(cmp);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].speedup == 1.0);
  }

  TEST_CASE("corrupt checkpoints exit 4") {
    const auto d = workdir();
    std::ofstream(d / "junk.lrsm") << "not a checkpoint";
    CHECK(run("analyze --ckpt " + q(d / "junk.lrsm") + " --out " + q(d / "r.csv")) == kExitCorrupt);
  }

  TEST_CASE("divergence exits 3 and still writes the record") {
    const auto d = workdir();
    CHECK(run("train --config " + q(d / "blowup.ini") + " --full-rank --out " + q(d / "boom")) == kExitDivergence);
    std::ifstream rec(d / "boom" / "record.csv");
    REQUIRE(rec.good());
    CHECK(read_record_csv(rec).diverged);
    REQUIRE(run("plan --config " + q(d / "blowup.ini") + " --uniform 0.5 --out " + q(d / "half-b.txt")) == kExitOk);
    CHECK(run("compare --config " + q(d / "blowup.ini") + " --plans " + q(d / "half-b.txt") + " --full-rank --out " +
              q(d / "cmp-boom") + " --timed-steps 2") == kExitAllDiverged);
  }
}
