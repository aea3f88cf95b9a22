// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

// Binary parameter snapshots.
//
// Layout (all integers little-endian):
//   "LRSM"                      magic
//   u32  version                (1)
//   u64  spec digest            FNV-1a of the model spec's canonical text
//   u32  metadata length, bytes "key=value\n" lines (model spec + stage)
//   u32  tensor count
//   per tensor:
//     u16 name length, name bytes
//     u8  kind (0 dense, 1 factor_u, 2 factor_v, 3 bias, 4 norm)
//     u32 rows, u32 cols
//     rows*cols f64 payload, row-major
//   u64  FNV-1a of every preceding byte

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lrsms/model.hpp"

namespace lrsms {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  TensorKind kind = TensorKind::dense;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix matrix() const { return Matrix(rows, cols, data); }
  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct Checkpoint {
  std::uint64_t spec_digest = 0;
  std::string metadata;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(std::string_view name) const;
  // Throws SchemaError when the model spec keys are missing or the digest differs.
  ModelSpec spec() const;
  std::string stage() const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

template <typename T>
Checkpoint make_checkpoint(const Model<T>& model, const std::string& stage);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws ParseError (with byte offset) on malformed structure, ChecksumError
// when the trailer does not match, SchemaError on inconsistent tensors.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lrsms
