// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrsms/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "lrsms/random.hpp"
#include "lrsms/text.hpp"

namespace lrsms {

namespace {

constexpr char kMagic[4] = {'L', 'R', 'S', 'M'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw ParseError(std::string("checkpoint truncated while reading ") + what, pos_);
    }
  }
  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>("tensor payload")); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::string meta_value(const std::string& metadata, std::string_view key) {
  for (auto line : split(metadata, '\n')) {
    const auto eq = line.find('=');
    if (eq != std::string_view::npos && trim(line.substr(0, eq)) == key) return std::string(trim(line.substr(eq + 1)));
  }
  throw SchemaError("checkpoint metadata lacks '" + std::string(key) + "'");
}

void check_tensors(const Checkpoint& ckpt) {
  std::set<std::string> names;
  std::map<std::string, std::pair<const TensorRecord*, const TensorRecord*>> factors;
  for (const auto& t : ckpt.tensors) {
    if (!names.insert(t.name).second) throw SchemaError("checkpoint: duplicate tensor name '" + t.name + "'");
    const auto dot = t.name.rfind('.');
    const std::string owner = dot == std::string::npos ? t.name : t.name.substr(0, dot);
    if (t.kind == TensorKind::factor_u) factors[owner].first = &t;
    if (t.kind == TensorKind::factor_v) factors[owner].second = &t;
  }
  for (const auto& [owner, pair] : factors) {
    if (!pair.first || !pair.second) {
      throw SchemaError("checkpoint: layer '" + owner + "' has an unpaired factor tensor");
    }
    if (pair.first->cols != pair.second->cols) {
      throw SchemaError("checkpoint: layer '" + owner + "' factors disagree on rank (" +
                        std::to_string(pair.first->cols) + " vs " + std::to_string(pair.second->cols) + ")");
    }
  }
}

}  // namespace

const TensorRecord* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

ModelSpec Checkpoint::spec() const {
  ModelSpec spec;
  try {
    spec = ModelSpec::from_canonical(metadata);
  } catch (const SchemaError&) {
    throw;
  } catch (const Error& e) {
    throw SchemaError(std::string("checkpoint metadata: ") + e.what());
  }
  if (spec.digest() != spec_digest) throw SchemaError("checkpoint: model spec digest does not match metadata");
  return spec;
}

std::string Checkpoint::stage() const { return meta_value(metadata, "stage"); }

template <typename T>
Checkpoint make_checkpoint(const Model<T>& model, const std::string& stage) {
  Checkpoint ckpt;
  ckpt.spec_digest = model.spec().digest();
  ckpt.metadata = "stage=" + stage + "\n" + model.spec().canonical();
  for (const auto& p : model.parameters()) {
    TensorRecord t;
    t.name = p.name;
    t.kind = p.kind;
    t.rows = p.rows;
    t.cols = p.cols;
    t.data.assign(p.value.begin(), p.value.end());
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint64_t>(ckpt.spec_digest);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.metadata.size()));
  w.bytes(ckpt.metadata.data(), ckpt.metadata.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xffff) throw DomainError("checkpoint: tensor name too long");
    if (t.data.size() != t.rows * t.cols) throw ShapeError("checkpoint: tensor '" + t.name + "' payload size mismatch");
    w.le<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.kind));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.rows));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.cols));
    for (double x : t.data) w.f64(x);
  }
  auto& buf = w.buffer();
  const std::uint64_t sum = fnv1a(std::string_view(reinterpret_cast<const char*>(buf.data()), buf.size()));
  w.le<std::uint64_t>(sum);
  return std::move(buf);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (magic != std::string_view(kMagic, 4)) throw ParseError("not an LRSM checkpoint (bad magic)", 0);
  const std::size_t version_at = r.pos();
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  Checkpoint ckpt;
  ckpt.spec_digest = r.le<std::uint64_t>("spec digest");
  const auto meta_len = r.le<std::uint32_t>("metadata length");
  ckpt.metadata = r.str(meta_len, "metadata");
  const auto count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    const auto name_len = r.le<std::uint16_t>("tensor name length");
    t.name = r.str(name_len, "tensor name");
    const std::size_t kind_at = r.pos();
    const auto kind = r.le<std::uint8_t>("tensor kind");
    if (kind > static_cast<std::uint8_t>(TensorKind::norm)) {
      throw ParseError("unknown tensor kind " + std::to_string(kind) + " for '" + t.name + "'", kind_at);
    }
    t.kind = static_cast<TensorKind>(kind);
    t.rows = r.le<std::uint32_t>("tensor rows");
    t.cols = r.le<std::uint32_t>("tensor cols");
    const std::uint64_t n = static_cast<std::uint64_t>(t.rows) * t.cols;
    if (n > r.remaining() / 8) {
      throw ParseError("tensor '" + t.name + "' payload exceeds file size", r.pos());
    }
    t.data.resize(n);
    for (auto& x : t.data) x = r.f64();
    ckpt.tensors.push_back(std::move(t));
  }
  const std::size_t body = r.pos();
  const auto stored = r.le<std::uint64_t>("checksum");
  if (r.remaining() != 0) throw ParseError("trailing bytes after checksum", r.pos());
  const std::uint64_t actual = fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), body));
  if (stored != actual) throw ChecksumError("checkpoint checksum mismatch");
  check_tensors(ckpt);
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write checkpoint '" + path + "'");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw UsageError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw UsageError("cannot read checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

template Checkpoint make_checkpoint<float>(const Model<float>&, const std::string&);
template Checkpoint make_checkpoint<double>(const Model<double>&, const std::string&);

}  // namespace lrsms
