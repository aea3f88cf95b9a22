// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lrsms {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand dimensions do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside its mathematical domain (rank out of range, alpha > 1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Iteration failed to converge or a value became non-finite.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Two objects that must agree do not (plan vs model, cache vs model, ...).
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

// Malformed input bytes. `offset` is the byte position where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Stored checksum does not match the payload.
class ChecksumError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that lacks required fields.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Bad command-line or configuration input.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace lrsms
