// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrsms/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "lrsms/random.hpp"
#include "lrsms/text.hpp"

namespace lrsms {

// ---------------------------------------------------------------- spec

void ModelSpec::validate() const {
  if (d_model == 0 || n_heads == 0 || d_ffn == 0 || encoder_blocks == 0 || decoder_blocks == 0 || max_seq == 0) {
    throw DomainError("model spec: all sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw DomainError("model spec: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (vocab <= static_cast<std::size_t>(kFirstSymbol)) {
    throw DomainError("model spec: vocab must exceed the " + std::to_string(kFirstSymbol) + " reserved tokens");
  }
}

std::string ModelSpec::canonical() const {
  std::string s;
  s += "d_model=" + std::to_string(d_model) + "\n";
  s += "n_heads=" + std::to_string(n_heads) + "\n";
  s += "d_ffn=" + std::to_string(d_ffn) + "\n";
  s += "encoder_blocks=" + std::to_string(encoder_blocks) + "\n";
  s += "decoder_blocks=" + std::to_string(decoder_blocks) + "\n";
  s += "vocab=" + std::to_string(vocab) + "\n";
  s += "max_seq=" + std::to_string(max_seq) + "\n";
  s += "seed=" + std::to_string(seed) + "\n";
  return s;
}

std::uint64_t ModelSpec::digest() const { return fnv1a(canonical()); }

ModelSpec ModelSpec::from_canonical(std::string_view text) {
  ModelSpec spec;
  std::set<std::string> seen;
  for (auto line : split(text, '\n')) {
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw SchemaError("model spec: malformed line '" + std::string(line) + "'");
    const std::string key(trim(line.substr(0, eq)));
    const auto value = line.substr(eq + 1);
    std::size_t* field = nullptr;
    if (key == "d_model") field = &spec.d_model;
    else if (key == "n_heads") field = &spec.n_heads;
    else if (key == "d_ffn") field = &spec.d_ffn;
    else if (key == "encoder_blocks") field = &spec.encoder_blocks;
    else if (key == "decoder_blocks") field = &spec.decoder_blocks;
    else if (key == "vocab") field = &spec.vocab;
    else if (key == "max_seq") field = &spec.max_seq;
    else if (key == "seed") {
      spec.seed = parse_size(value);
      seen.insert(key);
      continue;
    } else {
      continue;  // other metadata keys are ignored here
    }
    *field = parse_size(value);
    seen.insert(key);
  }
  for (const char* key : {"d_model", "n_heads", "d_ffn", "encoder_blocks", "decoder_blocks", "vocab", "max_seq", "seed"}) {
    if (!seen.contains(key)) throw SchemaError(std::string("model spec: missing key '") + key + "'");
  }
  spec.validate();
  return spec;
}

std::vector<LayerSpec> enumerate_layers(const ModelSpec& spec) {
  spec.validate();
  std::vector<LayerSpec> out;
  const std::size_t d = spec.d_model;
  auto add = [&](std::string id, LayerKind kind, Submodel sm, std::size_t b, std::size_t blocks, std::size_t m,
                 std::size_t n) { out.push_back(LayerSpec{std::move(id), kind, sm, b, blocks, m, n}); };
  for (std::size_t b = 0; b < spec.encoder_blocks; ++b) {
    const std::string p = "enc." + std::to_string(b) + ".";
    for (const char* proj : {"q", "k", "v", "o"}) {
      add(p + "attn." + proj, LayerKind::mhsa, Submodel::encoder, b, spec.encoder_blocks, d, d);
    }
    add(p + "ffn.in", LayerKind::ffn, Submodel::encoder, b, spec.encoder_blocks, spec.d_ffn, d);
    add(p + "ffn.out", LayerKind::ffn, Submodel::encoder, b, spec.encoder_blocks, d, spec.d_ffn);
  }
  for (std::size_t b = 0; b < spec.decoder_blocks; ++b) {
    const std::string p = "dec." + std::to_string(b) + ".";
    for (const char* part : {"self.", "cross."}) {
      for (const char* proj : {"q", "k", "v", "o"}) {
        add(p + part + proj, LayerKind::mhsa, Submodel::decoder, b, spec.decoder_blocks, d, d);
      }
    }
    add(p + "ffn.in", LayerKind::ffn, Submodel::decoder, b, spec.decoder_blocks, spec.d_ffn, d);
    add(p + "ffn.out", LayerKind::ffn, Submodel::decoder, b, spec.decoder_blocks, d, spec.d_ffn);
  }
  return out;
}

std::uint64_t fixed_param_count(const ModelSpec& spec) {
  spec.validate();
  const std::uint64_t d = spec.d_model;
  const std::uint64_t v = spec.vocab;
  const std::uint64_t embeddings = 2 * v * d;
  const std::uint64_t enc_bias = spec.encoder_blocks * (4 * d + spec.d_ffn + d);
  const std::uint64_t dec_bias = spec.decoder_blocks * (8 * d + spec.d_ffn + d);
  const std::uint64_t norms = (2 * spec.encoder_blocks + 1 + 3 * spec.decoder_blocks + 1) * 2 * d;
  const std::uint64_t head = v * d + v;
  return embeddings + enc_bias + dec_bias + norms + head;
}

// ---------------------------------------------------------------- data

Batch Batch::repeated(std::size_t times) const {
  Batch out = *this;
  out.size = size * times;
  for (std::size_t t = 1; t < times; ++t) {
    out.src.insert(out.src.end(), src.begin(), src.end());
    out.tgt_in.insert(out.tgt_in.end(), tgt_in.begin(), tgt_in.end());
    out.tgt_out.insert(out.tgt_out.end(), tgt_out.begin(), tgt_out.end());
    out.src_lengths.insert(out.src_lengths.end(), src_lengths.begin(), src_lengths.end());
    out.tgt_lengths.insert(out.tgt_lengths.end(), tgt_lengths.begin(), tgt_lengths.end());
  }
  return out;
}

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::modular_sum: return "modular-sum";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "copy") return TaskKind::copy;
  if (s == "reverse") return TaskKind::reverse;
  if (s == "modular-sum") return TaskKind::modular_sum;
  throw DomainError("unknown task kind '" + std::string(s) + "'");
}

void SyntheticTask::validate() const {
  if (seq_len == 0 || min_len == 0 || min_len > seq_len) {
    throw DomainError("task: need 1 <= min_len <= seq_len");
  }
  if (vocab <= static_cast<std::size_t>(kFirstSymbol)) throw DomainError("task: vocab too small");
}

Batch SyntheticTask::make_batch(std::uint64_t stream_seed, std::size_t batch_size) const {
  validate();
  if (batch_size == 0) throw DomainError("task: batch size must be positive");
  Rng rng(stream_seed);
  const std::size_t symbols = vocab - kFirstSymbol;
  Batch b;
  b.size = batch_size;
  b.src_len = seq_len;
  b.tgt_len = seq_len;
  b.src.assign(batch_size * seq_len, kPadToken);
  b.tgt_in.assign(batch_size * seq_len, kPadToken);
  b.tgt_out.assign(batch_size * seq_len, kPadToken);
  std::vector<int> seq(seq_len);
  std::vector<int> tgt(seq_len);
  for (std::size_t s = 0; s < batch_size; ++s) {
    const std::size_t len = min_len + rng.below(seq_len - min_len + 1);
    for (std::size_t t = 0; t < len; ++t) seq[t] = kFirstSymbol + static_cast<int>(rng.below(symbols));
    switch (kind) {
      case TaskKind::copy:
        std::copy_n(seq.begin(), len, tgt.begin());
        break;
      case TaskKind::reverse:
        for (std::size_t t = 0; t < len; ++t) tgt[t] = seq[len - 1 - t];
        break;
      case TaskKind::modular_sum: {
        std::size_t acc = 0;
        for (std::size_t t = 0; t < len; ++t) {
          acc = (acc + static_cast<std::size_t>(seq[t] - kFirstSymbol)) % symbols;
          tgt[t] = kFirstSymbol + static_cast<int>(acc);
        }
        break;
      }
    }
    for (std::size_t t = 0; t < len; ++t) {
      b.src[s * seq_len + t] = seq[t];
      b.tgt_out[s * seq_len + t] = tgt[t];
      b.tgt_in[s * seq_len + t] = t == 0 ? kBosToken : tgt[t - 1];
    }
    b.src_lengths.push_back(len);
    b.tgt_lengths.push_back(len);
  }
  return b;
}

Batch SyntheticTask::train_batch(std::size_t epoch, std::size_t step, std::size_t batch_size) const {
  return make_batch(derive_seed(derive_seed(seed, "train"), epoch, step), batch_size);
}

Batch SyntheticTask::eval_batch(std::size_t index, std::size_t batch_size) const {
  return make_batch(derive_seed(derive_seed(seed, "eval"), index, 0), batch_size);
}

std::string_view to_string(TensorKind k) {
  switch (k) {
    case TensorKind::dense: return "dense";
    case TensorKind::factor_u: return "factor_u";
    case TensorKind::factor_v: return "factor_v";
    case TensorKind::bias: return "bias";
    case TensorKind::norm: return "norm";
  }
  return "?";
}

// ---------------------------------------------------------------- gradients

template <typename T>
double GradientSet<T>::global_norm() const {
  double s = 0.0;
  for (const auto& t : tensors) {
    for (T x : t.data()) s += static_cast<double>(x) * static_cast<double>(x);
  }
  return std::sqrt(s);
}

template <typename T>
void GradientSet<T>::scale(T s) {
  for (auto& t : tensors) {
    for (T& x : t.data()) x *= s;
  }
}

namespace {

template <typename T>
using Mat = BasicMatrix<T>;

template <typename T>
void add_into(Mat<T>& a, const Mat<T>& b) {
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += bd[i];
}

template <typename T>
Mat<T> column(std::span<const T> v) {
  return Mat<T>(v.size(), 1, std::vector<T>(v.begin(), v.end()));
}

template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T s = T(0);
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

constexpr double kNormEps = 1e-5;

template <typename T>
Mat<T> layer_norm_forward(const LayerNorm<T>& ln, const Mat<T>& x, detail::NormCache<T>& cache) {
  const std::size_t d = x.rows();
  const std::size_t n = x.cols();
  std::vector<T> mean(n, T(0));
  for (std::size_t i = 0; i < d; ++i) {
    const T* row = x.row(i).data();
    for (std::size_t c = 0; c < n; ++c) mean[c] += row[c];
  }
  for (auto& m : mean) m /= static_cast<T>(d);
  std::vector<T> var(n, T(0));
  for (std::size_t i = 0; i < d; ++i) {
    const T* row = x.row(i).data();
    for (std::size_t c = 0; c < n; ++c) {
      const T diff = row[c] - mean[c];
      var[c] += diff * diff;
    }
  }
  cache.rstd.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    cache.rstd[c] = T(1) / std::sqrt(var[c] / static_cast<T>(d) + static_cast<T>(kNormEps));
  }
  cache.xhat = Mat<T>(d, n);
  Mat<T> y(d, n);
  for (std::size_t i = 0; i < d; ++i) {
    const T* row = x.row(i).data();
    T* xh = cache.xhat.row(i).data();
    T* out = y.row(i).data();
    const T g = ln.gamma[i];
    const T b = ln.beta[i];
    for (std::size_t c = 0; c < n; ++c) {
      xh[c] = (row[c] - mean[c]) * cache.rstd[c];
      out[c] = g * xh[c] + b;
    }
  }
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const LayerNorm<T>& ln, const detail::NormCache<T>& cache, const Mat<T>& dy,
                           GradientSet<T>& grads) {
  const std::size_t d = dy.rows();
  const std::size_t n = dy.cols();
  Mat<T> dgamma(d, 1);
  Mat<T> dbeta(d, 1);
  Mat<T> dxhat(d, n);
  std::vector<T> m1(n, T(0));
  std::vector<T> m2(n, T(0));
  for (std::size_t i = 0; i < d; ++i) {
    const T* g = dy.row(i).data();
    const T* xh = cache.xhat.row(i).data();
    T* dx = dxhat.row(i).data();
    T sg = T(0);
    T sb = T(0);
    const T gamma = ln.gamma[i];
    for (std::size_t c = 0; c < n; ++c) {
      sg += g[c] * xh[c];
      sb += g[c];
      dx[c] = g[c] * gamma;
      m1[c] += dx[c];
      m2[c] += dx[c] * xh[c];
    }
    dgamma(i, 0) = sg;
    dbeta(i, 0) = sb;
  }
  const T inv_d = T(1) / static_cast<T>(d);
  for (std::size_t i = 0; i < d; ++i) {
    const T* xh = cache.xhat.row(i).data();
    T* dx = dxhat.row(i).data();
    for (std::size_t c = 0; c < n; ++c) {
      dx[c] = cache.rstd[c] * (dx[c] - m1[c] * inv_d - xh[c] * m2[c] * inv_d);
    }
  }
  grads.tensors[ln.param_index] = std::move(dgamma);
  grads.tensors[ln.param_index + 1] = std::move(dbeta);
  return dxhat;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename T>
Mat<T> feed_forward(const FeedForward<T>& ffn, const Mat<T>& x, detail::FeedForwardCache<T>& cache) {
  cache.input = x;
  cache.pre = ffn.in.forward(x);
  cache.act = Mat<T>(cache.pre.rows(), cache.pre.cols());
  auto pre = cache.pre.data();
  auto act = cache.act.data();
  for (std::size_t i = 0; i < pre.size(); ++i) act[i] = gelu(pre[i]);
  return ffn.out.forward(cache.act);
}

template <typename T>
Mat<T> feed_forward_backward(const FeedForward<T>& ffn, const detail::FeedForwardCache<T>& cache, const Mat<T>& dout,
                             GradientSet<T>& grads) {
  Mat<T> dact = ffn.out.backward(cache.act, dout, grads);
  auto pre = cache.pre.data();
  auto da = dact.data();
  for (std::size_t i = 0; i < da.size(); ++i) da[i] *= gelu_grad(pre[i]);
  return ffn.in.backward(cache.input, dact, grads);
}

struct AttentionShape {
  std::size_t seqs;
  std::size_t lq;
  std::size_t lk;
  std::size_t heads;
  bool causal;
  std::span<const std::size_t> key_lengths;

  std::size_t limit(std::size_t s, std::size_t i) const {
    const std::size_t valid = key_lengths[s];
    return causal ? std::min(valid, i + 1) : valid;
  }
};

template <typename T>
Mat<T> attention_forward(const Attention<T>& att, const Mat<T>& xq, const Mat<T>& xkv, const AttentionShape& shape,
                         detail::AttentionCache<T>& cache) {
  cache.q_t = transpose(att.q.forward(xq));
  cache.k_t = transpose(att.k.forward(xkv));
  cache.v_t = transpose(att.v.forward(xkv));
  const std::size_t d = cache.q_t.cols();
  const std::size_t dh = d / shape.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  cache.probs.assign(shape.seqs * shape.heads * shape.lq * shape.lk, T(0));
  Mat<T> ctx_t(shape.seqs * shape.lq, d);
  for (std::size_t s = 0; s < shape.seqs; ++s) {
    for (std::size_t h = 0; h < shape.heads; ++h) {
      for (std::size_t i = 0; i < shape.lq; ++i) {
        const T* qi = &cache.q_t(s * shape.lq + i, h * dh);
        T* p = &cache.probs[((s * shape.heads + h) * shape.lq + i) * shape.lk];
        const std::size_t limit = shape.limit(s, i);
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < limit; ++j) {
          p[j] = dot(qi, &cache.k_t(s * shape.lk + j, h * dh), dh) * scale;
          mx = std::max(mx, p[j]);
        }
        T sum = T(0);
        for (std::size_t j = 0; j < limit; ++j) {
          p[j] = std::exp(p[j] - mx);
          sum += p[j];
        }
        T* ci = &ctx_t(s * shape.lq + i, h * dh);
        for (std::size_t j = 0; j < limit; ++j) {
          p[j] /= sum;
          axpy(p[j], &cache.v_t(s * shape.lk + j, h * dh), ci, dh);
        }
      }
    }
  }
  cache.context = transpose(ctx_t);
  return att.o.forward(cache.context);
}

// Returns (d xq, d xkv).
template <typename T>
std::pair<Mat<T>, Mat<T>> attention_backward(const Attention<T>& att, const detail::AttentionCache<T>& cache,
                                             const Mat<T>& xq, const Mat<T>& xkv, const AttentionShape& shape,
                                             const Mat<T>& dout, GradientSet<T>& grads) {
  const Mat<T> dctx_t = transpose(att.o.backward(cache.context, dout, grads));
  const std::size_t d = cache.q_t.cols();
  const std::size_t dh = d / shape.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Mat<T> dq_t(cache.q_t.rows(), d);
  Mat<T> dk_t(cache.k_t.rows(), d);
  Mat<T> dv_t(cache.v_t.rows(), d);
  std::vector<T> dp(shape.lk);
  for (std::size_t s = 0; s < shape.seqs; ++s) {
    for (std::size_t h = 0; h < shape.heads; ++h) {
      for (std::size_t i = 0; i < shape.lq; ++i) {
        const std::size_t row = s * shape.lq + i;
        const T* dci = &dctx_t(row, h * dh);
        const T* qi = &cache.q_t(row, h * dh);
        T* dqi = &dq_t(row, h * dh);
        const T* p = &cache.probs[((s * shape.heads + h) * shape.lq + i) * shape.lk];
        const std::size_t limit = shape.limit(s, i);
        T pd = T(0);
        for (std::size_t j = 0; j < limit; ++j) {
          const std::size_t key = s * shape.lk + j;
          dp[j] = dot(dci, &cache.v_t(key, h * dh), dh);
          axpy(p[j], dci, &dv_t(key, h * dh), dh);
          pd += p[j] * dp[j];
        }
        for (std::size_t j = 0; j < limit; ++j) {
          const std::size_t key = s * shape.lk + j;
          const T ds = p[j] * (dp[j] - pd) * scale;
          axpy(ds, &cache.k_t(key, h * dh), dqi, dh);
          axpy(ds, qi, &dk_t(key, h * dh), dh);
        }
      }
    }
  }
  Mat<T> dxq = att.q.backward(xq, transpose(dq_t), grads);
  Mat<T> dxkv = att.k.backward(xkv, transpose(dk_t), grads);
  add_into(dxkv, att.v.backward(xkv, transpose(dv_t), grads));
  return {std::move(dxq), std::move(dxkv)};
}

template <typename T>
Mat<T> embed(const Mat<T>& table, const Mat<T>& positions, std::span<const int> tokens, std::size_t seqs,
             std::size_t len) {
  const std::size_t d = table.cols();
  Mat<T> x(d, seqs * len);
  for (std::size_t s = 0; s < seqs; ++s) {
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t col = s * len + t;
      const T* e = table.row(static_cast<std::size_t>(tokens[col])).data();
      for (std::size_t i = 0; i < d; ++i) x(i, col) = e[i] + positions(i, t);
    }
  }
  return x;
}

template <typename T>
void embed_backward(std::span<const int> tokens, const Mat<T>& dx, Mat<T>& dtable) {
  const std::size_t d = dx.rows();
  for (std::size_t col = 0; col < tokens.size(); ++col) {
    T* g = dtable.row(static_cast<std::size_t>(tokens[col])).data();
    for (std::size_t i = 0; i < d; ++i) g[i] += dx(i, col);
  }
}

void check_batch(const ModelSpec& spec, const Batch& b) {
  if (b.size == 0 || b.src_len == 0 || b.tgt_len == 0) throw ShapeError("batch: empty");
  if (b.src_len > spec.max_seq || b.tgt_len > spec.max_seq) {
    throw ShapeError("batch: sequence length exceeds max_seq " + std::to_string(spec.max_seq));
  }
  if (b.src.size() != b.size * b.src_len || b.tgt_in.size() != b.size * b.tgt_len ||
      b.tgt_out.size() != b.size * b.tgt_len || b.src_lengths.size() != b.size || b.tgt_lengths.size() != b.size) {
    throw ShapeError("batch: token arrays do not match declared shape");
  }
  for (std::size_t s = 0; s < b.size; ++s) {
    if (b.src_lengths[s] == 0 || b.src_lengths[s] > b.src_len || b.tgt_lengths[s] == 0 ||
        b.tgt_lengths[s] > b.tgt_len) {
      throw ShapeError("batch: sequence " + std::to_string(s) + " has an invalid length");
    }
  }
  auto in_vocab = [&](const std::vector<int>& v) {
    return std::all_of(v.begin(), v.end(), [&](int t) { return t >= 0 && static_cast<std::size_t>(t) < spec.vocab; });
  };
  if (!in_vocab(b.src) || !in_vocab(b.tgt_in) || !in_vocab(b.tgt_out)) throw ShapeError("batch: token outside vocab");
}

template <typename T>
Mat<T> sinusoid_table(std::size_t d, std::size_t len) {
  Mat<T> p(d, len);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      p(i, t) = static_cast<T>(std::sin(static_cast<double>(t) * freq));
      if (i + 1 < d) p(i + 1, t) = static_cast<T>(std::cos(static_cast<double>(t) * freq));
    }
  }
  return p;
}

}  // namespace

// ---------------------------------------------------------------- Linear

template <typename T>
std::size_t Linear<T>::out_dim() const {
  return factorized() ? low_rank().out_dim() : dense().out_dim();
}

template <typename T>
std::size_t Linear<T>::in_dim() const {
  return factorized() ? low_rank().in_dim() : dense().in_dim();
}

template <typename T>
std::size_t Linear<T>::rank() const {
  return factorized() ? low_rank().rank() : std::min(out_dim(), in_dim());
}

template <typename T>
BasicMatrix<T> Linear<T>::forward(const BasicMatrix<T>& x) const {
  return factorized() ? lrsms::forward(low_rank(), x) : lrsms::forward(dense(), x);
}

template <typename T>
BasicMatrix<T> Linear<T>::backward(const BasicMatrix<T>& x, const BasicMatrix<T>& grad_out,
                                   GradientSet<T>& grads) const {
  if (factorized()) {
    LayerGrads<T> g = lrsms::backward(low_rank(), x, grad_out);
    grads.tensors[param_index] = std::move(g.grad_u);
    grads.tensors[param_index + 1] = std::move(g.grad_v);
    if (g.grad_bias) grads.tensors[param_index + 2] = column<T>(*g.grad_bias);
    return std::move(g.grad_input);
  }
  DenseGrads<T> g = lrsms::backward(dense(), x, grad_out);
  grads.tensors[param_index] = std::move(g.grad_w);
  if (g.grad_bias) grads.tensors[param_index + 1] = column<T>(*g.grad_bias);
  return std::move(g.grad_input);
}

// ---------------------------------------------------------------- Model

template <typename T>
template <typename Self, typename F>
void Model<T>::walk(Self& self, F&& visit) {
  auto matrix = [&](const std::string& name, TensorKind kind, auto& m, auto* slot) {
    visit(name, kind, m.rows(), m.cols(), m.data(), slot);
  };
  auto vec = [&](const std::string& name, TensorKind kind, auto& v, auto* slot) {
    visit(name, kind, v.size(), std::size_t{1}, std::span(v), slot);
  };
  auto linear = [&](auto& lin) {
    auto* slot = &lin.param_index;
    if (lin.factorized()) {
      auto& l = lin.low_rank();
      matrix(lin.id() + ".u", TensorKind::factor_u, l.u(), slot);
      matrix(lin.id() + ".v", TensorKind::factor_v, l.v(), decltype(slot){});
      if (l.bias()) vec(lin.id() + ".b", TensorKind::bias, *l.bias(), decltype(slot){});
    } else {
      auto& l = lin.dense();
      matrix(lin.id() + ".w", TensorKind::dense, l.w, slot);
      if (l.bias) vec(lin.id() + ".b", TensorKind::bias, *l.bias, decltype(slot){});
    }
  };
  auto norm = [&](auto& ln) {
    auto* slot = &ln.param_index;
    vec(ln.id + ".gamma", TensorKind::norm, ln.gamma, slot);
    vec(ln.id + ".beta", TensorKind::norm, ln.beta, decltype(slot){});
  };
  using Slot = decltype(&self.head_.param_index);
  matrix("embed.src", TensorKind::dense, self.src_embed_, Slot{});
  matrix("embed.tgt", TensorKind::dense, self.tgt_embed_, Slot{});
  for (auto& blk : self.encoder_) {
    norm(blk.ln1);
    linear(blk.attn.q);
    linear(blk.attn.k);
    linear(blk.attn.v);
    linear(blk.attn.o);
    norm(blk.ln2);
    linear(blk.ffn.in);
    linear(blk.ffn.out);
  }
  norm(self.enc_final_);
  for (auto& blk : self.decoder_) {
    norm(blk.ln1);
    linear(blk.self_attn.q);
    linear(blk.self_attn.k);
    linear(blk.self_attn.v);
    linear(blk.self_attn.o);
    norm(blk.ln2);
    linear(blk.cross_attn.q);
    linear(blk.cross_attn.k);
    linear(blk.cross_attn.v);
    linear(blk.cross_attn.o);
    norm(blk.ln3);
    linear(blk.ffn.in);
    linear(blk.ffn.out);
  }
  norm(self.dec_final_);
  linear(self.head_);
}

template <typename T>
void Model<T>::assign_indices() {
  std::size_t counter = 0;
  walk(*this, [&](const std::string&, TensorKind, std::size_t, std::size_t, auto, std::size_t* slot) {
    if (slot) *slot = counter;
    ++counter;
  });
}

template <typename T>
Model<T> Model<T>::build(const ModelSpec& spec, const RankPlan& plan) {
  const auto layers = enumerate_layers(spec);
  check_plan_covers(plan, layers);
  Model<T> model;
  model.spec_ = spec;
  const std::size_t d = spec.d_model;

  auto make_linear = [&](const std::string& id, std::size_t m, std::size_t n) {
    Rng rng(derive_seed(spec.seed, id));
    Matrix w = kaiming_uniform(m, n, rng);
    const PlanEntry* e = plan.find(id);
    if (e && e->factorized) {
      return Linear<T>(id, cast_layer<T>(spectral_init(w, e->rank, true)));
    }
    return Linear<T>(id, DenseLinear<T>{cast<T>(w), std::vector<T>(m, T(0))});
  };
  auto make_norm = [&](const std::string& id) {
    return LayerNorm<T>{id, std::vector<T>(d, T(1)), std::vector<T>(d, T(0)), 0};
  };
  auto make_embedding = [&](const std::string& id) {
    Rng rng(derive_seed(spec.seed, id));
    const double bound = std::sqrt(3.0);
    Mat<T> e(spec.vocab, d);
    for (T& x : e.data()) x = static_cast<T>(rng.uniform(-bound, bound));
    return e;
  };
  auto attention = [&](const std::string& p) {
    return Attention<T>{make_linear(p + "q", d, d), make_linear(p + "k", d, d), make_linear(p + "v", d, d),
                        make_linear(p + "o", d, d)};
  };
  auto ffn = [&](const std::string& p) {
    return FeedForward<T>{make_linear(p + "ffn.in", spec.d_ffn, d), make_linear(p + "ffn.out", d, spec.d_ffn)};
  };

  model.src_embed_ = make_embedding("embed.src");
  model.tgt_embed_ = make_embedding("embed.tgt");
  for (std::size_t b = 0; b < spec.encoder_blocks; ++b) {
    const std::string p = "enc." + std::to_string(b) + ".";
    model.encoder_.push_back(EncoderBlock<T>{make_norm(p + "ln1"), attention(p + "attn."), make_norm(p + "ln2"), ffn(p)});
  }
  model.enc_final_ = make_norm("enc.final");
  for (std::size_t b = 0; b < spec.decoder_blocks; ++b) {
    const std::string p = "dec." + std::to_string(b) + ".";
    model.decoder_.push_back(DecoderBlock<T>{make_norm(p + "ln1"), attention(p + "self."), make_norm(p + "ln2"),
                                             attention(p + "cross."), make_norm(p + "ln3"), ffn(p)});
  }
  model.dec_final_ = make_norm("dec.final");
  {
    // Bound 1/sqrt(d): small logits, so an untrained model predicts near-uniformly.
    Rng rng(derive_seed(spec.seed, "head"));
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    Mat<T> w(spec.vocab, d);
    for (T& x : w.data()) x = static_cast<T>(rng.uniform(-bound, bound));
    model.head_ = Linear<T>("head", DenseLinear<T>{std::move(w), std::vector<T>(spec.vocab, T(0))});
  }
  model.positions_ = sinusoid_table<T>(d, spec.max_seq);
  model.assign_indices();
  return model;
}

template <typename T>
Model<T> Model<T>::build_full_rank(const ModelSpec& spec) {
  return build(spec, full_rank_plan(enumerate_layers(spec)));
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::parameters() {
  std::vector<ParamRef<T>> out;
  walk(*this, [&](const std::string& name, TensorKind kind, std::size_t r, std::size_t c, std::span<T> v, auto*) {
    out.push_back(ParamRef<T>{name, kind, r, c, v});
  });
  return out;
}

template <typename T>
std::vector<ParamRef<const T>> Model<T>::parameters() const {
  std::vector<ParamRef<const T>> out;
  walk(*this,
       [&](const std::string& name, TensorKind kind, std::size_t r, std::size_t c, std::span<const T> v, auto*) {
         out.push_back(ParamRef<const T>{name, kind, r, c, v});
       });
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.value.size();
  return n;
}

template <typename T>
GradientSet<T> Model<T>::zero_gradients() const {
  GradientSet<T> g;
  for (const auto& p : parameters()) {
    g.names.push_back(p.name);
    g.tensors.emplace_back(p.rows, p.cols);
  }
  return g;
}

template <typename T>
std::vector<const Linear<T>*> Model<T>::layers() const {
  std::vector<const Linear<T>*> out;
  for (const auto& b : encoder_) {
    for (const auto* l : {&b.attn.q, &b.attn.k, &b.attn.v, &b.attn.o, &b.ffn.in, &b.ffn.out}) out.push_back(l);
  }
  for (const auto& b : decoder_) {
    for (const auto* l : {&b.self_attn.q, &b.self_attn.k, &b.self_attn.v, &b.self_attn.o, &b.cross_attn.q,
                          &b.cross_attn.k, &b.cross_attn.v, &b.cross_attn.o, &b.ffn.in, &b.ffn.out}) {
      out.push_back(l);
    }
  }
  return out;
}

template <typename T>
const Linear<T>* Model<T>::find_layer(const std::string& id) const {
  for (const auto* l : layers()) {
    if (l->id() == id) return l;
  }
  return id == head_.id() ? &head_ : nullptr;
}

template <typename T>
ForwardResult<T> Model<T>::forward_loss(const Batch& batch) const {
  check_batch(spec_, batch);
  ForwardResult<T> result;
  auto& c = result.cache;
  c.model = this;
  c.model_version = version_;
  c.batch = batch;
  const std::size_t heads = spec_.n_heads;

  const AttentionShape enc_self{batch.size, batch.src_len, batch.src_len, heads, false, batch.src_lengths};
  const AttentionShape dec_self{batch.size, batch.tgt_len, batch.tgt_len, heads, true, batch.tgt_lengths};
  const AttentionShape cross{batch.size, batch.tgt_len, batch.src_len, heads, false, batch.src_lengths};

  Mat<T> x = embed(src_embed_, positions_, std::span<const int>(batch.src), batch.size, batch.src_len);
  c.encoder.resize(encoder_.size());
  for (std::size_t b = 0; b < encoder_.size(); ++b) {
    const auto& blk = encoder_[b];
    auto& bc = c.encoder[b];
    bc.a1 = layer_norm_forward(blk.ln1, x, bc.ln1);
    add_into(x, attention_forward(blk.attn, bc.a1, bc.a1, enc_self, bc.attn));
    const Mat<T> a2 = layer_norm_forward(blk.ln2, x, bc.ln2);
    add_into(x, feed_forward(blk.ffn, a2, bc.ffn));
  }
  c.memory = layer_norm_forward(enc_final_, x, c.enc_final);

  Mat<T> y = embed(tgt_embed_, positions_, std::span<const int>(batch.tgt_in), batch.size, batch.tgt_len);
  c.decoder.resize(decoder_.size());
  for (std::size_t b = 0; b < decoder_.size(); ++b) {
    const auto& blk = decoder_[b];
    auto& bc = c.decoder[b];
    bc.a1 = layer_norm_forward(blk.ln1, y, bc.ln1);
    add_into(y, attention_forward(blk.self_attn, bc.a1, bc.a1, dec_self, bc.self_attn));
    bc.a2 = layer_norm_forward(blk.ln2, y, bc.ln2);
    add_into(y, attention_forward(blk.cross_attn, bc.a2, c.memory, cross, bc.cross_attn));
    const Mat<T> a3 = layer_norm_forward(blk.ln3, y, bc.ln3);
    add_into(y, feed_forward(blk.ffn, a3, bc.ffn));
  }
  c.head_input = layer_norm_forward(dec_final_, y, c.dec_final);
  c.probs = head_.forward(c.head_input);

  const std::size_t vocab = spec_.vocab;
  double loss = 0.0;
  std::size_t targets = 0;
  std::size_t correct = 0;
  auto& probs = c.probs;
  const std::size_t cols = probs.cols();
  std::vector<T> mx(cols, -std::numeric_limits<T>::infinity());
  std::vector<T> sum(cols, T(0));
  for (std::size_t v = 0; v < vocab; ++v) {
    const T* row = probs.row(v).data();
    for (std::size_t col = 0; col < cols; ++col) mx[col] = std::max(mx[col], row[col]);
  }
  std::vector<std::size_t> argmax(cols, 0);
  {
    std::vector<T> best(cols, -std::numeric_limits<T>::infinity());
    for (std::size_t v = 0; v < vocab; ++v) {
      const T* row = probs.row(v).data();
      for (std::size_t col = 0; col < cols; ++col) {
        if (row[col] > best[col]) {
          best[col] = row[col];
          argmax[col] = v;
        }
      }
    }
  }
  for (std::size_t v = 0; v < vocab; ++v) {
    T* row = probs.row(v).data();
    for (std::size_t col = 0; col < cols; ++col) {
      row[col] = std::exp(row[col] - mx[col]);
      sum[col] += row[col];
    }
  }
  for (std::size_t s = 0; s < batch.size; ++s) {
    for (std::size_t t = 0; t < batch.tgt_lengths[s]; ++t) {
      const std::size_t col = s * batch.tgt_len + t;
      const auto label = static_cast<std::size_t>(batch.tgt_out[col]);
      loss -= std::log(static_cast<double>(probs(label, col))) - std::log(static_cast<double>(sum[col]));
      ++targets;
      if (argmax[col] == label) ++correct;
    }
  }
  for (std::size_t v = 0; v < vocab; ++v) {
    T* row = probs.row(v).data();
    for (std::size_t col = 0; col < cols; ++col) row[col] /= sum[col];
  }
  c.target_count = targets;
  result.loss = loss / static_cast<double>(targets);
  result.correct = correct;
  result.targets = targets;

  if (!std::isfinite(result.loss)) {
    std::vector<std::pair<std::string, const Mat<T>*>> trail;
    for (std::size_t b = 0; b < c.encoder.size(); ++b) {
      const std::string p = "enc." + std::to_string(b) + ".";
      const auto& bc = c.encoder[b];
      trail.insert(trail.end(), {{p + "ln1", &bc.a1}, {p + "attn.q", &bc.attn.q_t}, {p + "attn.k", &bc.attn.k_t},
                                 {p + "attn.v", &bc.attn.v_t}, {p + "attn.softmax", &bc.attn.context},
                                 {p + "ln2", &bc.ffn.input}, {p + "ffn.in", &bc.ffn.pre}, {p + "ffn.gelu", &bc.ffn.act}});
    }
    trail.push_back({"enc.final", &c.memory});
    for (std::size_t b = 0; b < c.decoder.size(); ++b) {
      const std::string p = "dec." + std::to_string(b) + ".";
      const auto& bc = c.decoder[b];
      trail.insert(trail.end(), {{p + "ln1", &bc.a1}, {p + "self.q", &bc.self_attn.q_t},
                                 {p + "self.k", &bc.self_attn.k_t}, {p + "self.v", &bc.self_attn.v_t},
                                 {p + "self.softmax", &bc.self_attn.context}, {p + "ln2", &bc.a2},
                                 {p + "cross.q", &bc.cross_attn.q_t}, {p + "cross.k", &bc.cross_attn.k_t},
                                 {p + "cross.v", &bc.cross_attn.v_t}, {p + "cross.softmax", &bc.cross_attn.context},
                                 {p + "ln3", &bc.ffn.input}, {p + "ffn.in", &bc.ffn.pre}, {p + "ffn.gelu", &bc.ffn.act}});
    }
    trail.push_back({"dec.final", &c.head_input});
    trail.push_back({"head", &c.probs});
    std::string where = "loss";
    for (const auto& [id, m] : trail) {
      if (!m->all_finite()) {
        where = id;
        break;
      }
    }
    throw NumericalError("non-finite loss; first non-finite activation at layer '" + where + "'");
  }
  return result;
}

template <typename T>
GradientSet<T> Model<T>::backward(const ForwardCache<T>& c) const {
  if (c.model != this) throw ConsistencyError("backward: cache was produced by a different model");
  if (c.model_version != version_) {
    throw ConsistencyError("backward: stale cache (model version " + std::to_string(version_) + ", cache version " +
                           std::to_string(c.model_version) + ")");
  }
  const Batch& batch = c.batch;
  const std::size_t heads = spec_.n_heads;
  const AttentionShape enc_self{batch.size, batch.src_len, batch.src_len, heads, false, batch.src_lengths};
  const AttentionShape dec_self{batch.size, batch.tgt_len, batch.tgt_len, heads, true, batch.tgt_lengths};
  const AttentionShape cross{batch.size, batch.tgt_len, batch.src_len, heads, false, batch.src_lengths};

  GradientSet<T> grads = zero_gradients();

  Mat<T> dlogits(spec_.vocab, c.probs.cols());
  const T inv = T(1) / static_cast<T>(c.target_count);
  for (std::size_t s = 0; s < batch.size; ++s) {
    for (std::size_t t = 0; t < batch.tgt_lengths[s]; ++t) {
      const std::size_t col = s * batch.tgt_len + t;
      for (std::size_t v = 0; v < spec_.vocab; ++v) dlogits(v, col) = c.probs(v, col) * inv;
      dlogits(static_cast<std::size_t>(batch.tgt_out[col]), col) -= inv;
    }
  }
  Mat<T> dy = layer_norm_backward(dec_final_, c.dec_final, head_.backward(c.head_input, dlogits, grads), grads);
  Mat<T> dmemory(c.memory.rows(), c.memory.cols());
  for (std::size_t b = decoder_.size(); b-- > 0;) {
    const auto& blk = decoder_[b];
    const auto& bc = c.decoder[b];
    add_into(dy, layer_norm_backward(blk.ln3, bc.ln3, feed_forward_backward(blk.ffn, bc.ffn, dy, grads), grads));
    auto [dq, dkv] = attention_backward(blk.cross_attn, bc.cross_attn, bc.a2, c.memory, cross, dy, grads);
    add_into(dmemory, dkv);
    add_into(dy, layer_norm_backward(blk.ln2, bc.ln2, dq, grads));
    auto [sq, skv] = attention_backward(blk.self_attn, bc.self_attn, bc.a1, bc.a1, dec_self, dy, grads);
    add_into(sq, skv);
    add_into(dy, layer_norm_backward(blk.ln1, bc.ln1, sq, grads));
  }
  embed_backward<T>(std::span<const int>(batch.tgt_in), dy, grads.tensors[1]);

  Mat<T> dx = layer_norm_backward(enc_final_, c.enc_final, dmemory, grads);
  for (std::size_t b = encoder_.size(); b-- > 0;) {
    const auto& blk = encoder_[b];
    const auto& bc = c.encoder[b];
    add_into(dx, layer_norm_backward(blk.ln2, bc.ln2, feed_forward_backward(blk.ffn, bc.ffn, dx, grads), grads));
    auto [dq, dkv] = attention_backward(blk.attn, bc.attn, bc.a1, bc.a1, enc_self, dx, grads);
    add_into(dq, dkv);
    add_into(dx, layer_norm_backward(blk.ln1, bc.ln1, dq, grads));
  }
  embed_backward<T>(std::span<const int>(batch.src), dx, grads.tensors[0]);
  return grads;
}

template <typename T>
std::uint64_t ForwardCache<T>::activation_elements() const {
  std::uint64_t n = 0;
  auto norm = [&](const detail::NormCache<T>& c) { n += c.xhat.size() + c.rstd.size(); };
  auto attn = [&](const detail::AttentionCache<T>& c) {
    n += c.q_t.size() + c.k_t.size() + c.v_t.size() + c.probs.size() + c.context.size();
  };
  auto ffn = [&](const detail::FeedForwardCache<T>& c) { n += c.input.size() + c.pre.size() + c.act.size(); };
  for (const auto& b : encoder) {
    norm(b.ln1);
    n += b.a1.size();
    attn(b.attn);
    norm(b.ln2);
    ffn(b.ffn);
  }
  norm(enc_final);
  n += memory.size();
  for (const auto& b : decoder) {
    norm(b.ln1);
    n += b.a1.size();
    attn(b.self_attn);
    norm(b.ln2);
    n += b.a2.size();
    attn(b.cross_attn);
    norm(b.ln3);
    ffn(b.ffn);
  }
  norm(dec_final);
  n += head_input.size() + probs.size();
  return n;
}

template struct GradientSet<float>;
template struct GradientSet<double>;
template class Linear<float>;
template class Linear<double>;
template struct ForwardCache<float>;
template struct ForwardCache<double>;
template class Model<float>;
template class Model<double>;

}  // namespace lrsms
