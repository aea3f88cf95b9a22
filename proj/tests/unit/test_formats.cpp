// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lrsms/checkpoint.hpp"
#include "lrsms/config.hpp"

using namespace lrsms;

namespace {

ModelSpec small() {
  ModelSpec s;
  s.d_model = 8;
  s.n_heads = 2;
  s.d_ffn = 16;
  s.encoder_blocks = 2;
  s.decoder_blocks = 1;
  s.vocab = 7;
  s.max_seq = 5;
  return s;
}

Checkpoint sample() {
  const auto layers = enumerate_layers(small());
  return make_checkpoint(Model<double>::build(small(), uniform_plan(layers, 0.5)), "epoch-003");
}

void patch_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("encode / decode round trip") {
    const Checkpoint c = sample();
    CHECK(c.stage() == "epoch-003");
    CHECK(c.spec() == small());
    const auto bytes = encode_checkpoint(c);
    CHECK(std::memcmp(bytes.data(), "LRSM", 4) == 0);
    const Checkpoint back = decode_checkpoint(bytes);
    CHECK(back == c);
    CHECK(encode_checkpoint(back) == bytes);
  }

  TEST_CASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "lrsms-test-ckpt.lrsm";
    save_checkpoint(path.string(), sample());
    CHECK(load_checkpoint(path.string()) == sample());
    CHECK_THROWS_AS(load_checkpoint((path.parent_path() / "no-such-file.lrsm").string()), UsageError);
  }

  TEST_CASE("float model checkpoints widen exactly") {
    const auto m = Model<float>::build_full_rank(small());
    const Checkpoint c = make_checkpoint(m, "x");
    const auto params = m.parameters();
    REQUIRE(c.tensors.size() == params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      CHECK(c.tensors[i].name == params[i].name);
      CHECK(c.tensors[i].data[0] == static_cast<double>(params[i].value[0]));
    }
  }

  TEST_CASE("corruption is detected") {
    const auto good = encode_checkpoint(sample());
    SUBCASE("bad magic") {
      auto b = good;
      b[0] = 'X';
      try {
        (void)decode_checkpoint(b);
        FAIL("expected ParseError");
      } catch (const ParseError& e) {
        CHECK(e.offset() == 0);
      }
    }
    SUBCASE("bad version") {
      auto b = good;
      patch_u32(b, 4, 7);
      try {
        (void)decode_checkpoint(b);
        FAIL("expected ParseError");
      } catch (const ParseError& e) {
        CHECK(e.offset() == 4);
      }
    }
    SUBCASE("every truncation") {
      for (std::size_t n = 0; n < good.size(); n += 13) {
        CHECK_THROWS_AS(decode_checkpoint(std::span(good.data(), n)), ParseError);
      }
    }
    SUBCASE("trailing bytes") {
      auto b = good;
      b.push_back(0);
      CHECK_THROWS_AS(decode_checkpoint(b), ParseError);
    }
    SUBCASE("flipped payload bit") {
      auto b = good;
      b[b.size() - 20] ^= 0x10;
      CHECK_THROWS_AS(decode_checkpoint(b), ChecksumError);
    }
    SUBCASE("flipped checksum bit") {
      auto b = good;
      b.back() ^= 0x01;
      CHECK_THROWS_AS(decode_checkpoint(b), ChecksumError);
    }
  }

  TEST_CASE("schema violations") {
    Checkpoint c = sample();
    SUBCASE("duplicate tensor") {
      c.tensors.push_back(c.tensors.front());
      CHECK_THROWS_AS(decode_checkpoint(encode_checkpoint(c)), SchemaError);
    }
    SUBCASE("unpaired factor") {
      for (auto it = c.tensors.begin(); it != c.tensors.end(); ++it) {
        if (it->kind == TensorKind::factor_v) {
          c.tensors.erase(it);
          break;
        }
      }
      CHECK_THROWS_AS(decode_checkpoint(encode_checkpoint(c)), SchemaError);
    }
    SUBCASE("digest disagrees with metadata") {
      c.spec_digest ^= 1;
      CHECK_THROWS_AS(c.spec(), SchemaError);
    }
  }
}

TEST_SUITE("config") {
  TEST_CASE("defaults and overrides") {
    std::istringstream is(
        "# comment\n"
        "[model]\nd_model = 64\nvocab = 20\nmax_seq = 10\n"
        "[task]\nkind = reverse\nmin_len = 4\n"
        "; another comment\n"
        "[train]\npeak_lr = 1e-3\nschedule = cosine\nbatch_size = 16\n"
        "[rank]\ngamma = 0.1,0.2,full\n"
        "[output]\ndir = runs/a\n");
    const RunConfig c = parse_run_config(is, "/base");
    CHECK(c.model.d_model == 64);
    CHECK(c.model.n_heads == 4);
    CHECK(c.task.kind == TaskKind::reverse);
    CHECK(c.task.seq_len == 10);
    CHECK(c.task.min_len == 4);
    CHECK(c.task.vocab == 20);
    CHECK(c.train.peak_lr == 1e-3);
    CHECK(c.train.schedule == ScheduleKind::cosine);
    CHECK(c.train.batch_size == 16);
    REQUIRE(c.gamma.has_value());
    CHECK(c.gamma->ffn_full_rank);
    CHECK(c.out_dir == "/base/runs/a");
  }

  TEST_CASE("write / parse round trip") {
    RunConfig c;
    c.model = small();
    c.task.kind = TaskKind::modular_sum;
    c.task.seq_len = 5;
    c.task.min_len = 2;
    c.task.vocab = 7;
    c.train.total_epochs = 12;
    c.uniform = 0.25;
    c.out_dir = "/tmp/x";
    std::stringstream ss;
    write_run_config(ss, c);
    const RunConfig back = parse_run_config(ss, "/elsewhere");
    CHECK(back.model == c.model);
    CHECK(back.task.kind == c.task.kind);
    CHECK(back.task.min_len == 2);
    CHECK(back.train.total_epochs == 12);
    CHECK(back.uniform == c.uniform);
    CHECK(back.out_dir == "/tmp/x");
  }

  TEST_CASE("relative paths follow the file") {
    const auto dir = std::filesystem::temp_directory_path() / "lrsms-test-config";
    std::filesystem::create_directories(dir);
    {
      std::ofstream os(dir / "run.ini");
      os << "[rank]\nplan = plans/p.txt\n";
    }
    const RunConfig c = load_run_config((dir / "run.ini").string());
    CHECK(std::filesystem::path(*c.plan_path) == dir / "plans/p.txt");
  }

  TEST_CASE("rejections") {
    for (const char* text : {"[modle]\nd_model = 4\n", "[model]\nwidth = 4\n", "[model]\nd_model = four\n",
                             "[model]\nn_heads = 3\n", "[train]\nschedule = linear\n",
                             "[rank]\ngamma = 0.5,0.2,0.1,0.2\n", "[rank]\ngamma = 0.1,0.2,0.1,0.2\nuniform = 0.5\n",
                             "[task]\nmin_len = 99\n"}) {
      std::istringstream is(text);
      CAPTURE(text);
      CHECK_THROWS_AS(parse_run_config(is, "."), UsageError);
    }
    CHECK_THROWS_AS(load_run_config("/no/such/config.ini"), UsageError);
  }
}
