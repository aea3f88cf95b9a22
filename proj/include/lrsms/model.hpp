// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

// Desk-scale encoder-decoder transformer with hand-written backprop.
//
// Activations are feature-major: a batch of S sequences of length L is a
// d x (S*L) matrix whose column s*L + t is token t of sequence s. Every
// attention and feed-forward projection is either dense or factorized,
// as chosen by a RankPlan.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lrsms/factorized.hpp"
#include "lrsms/linalg.hpp"
#include "lrsms/rank_plan.hpp"

namespace lrsms {

struct ModelSpec {
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 512;
  std::size_t encoder_blocks = 6;
  std::size_t decoder_blocks = 2;
  std::size_t vocab = 32;
  std::size_t max_seq = 24;
  std::uint64_t seed = 0;

  void validate() const;
  // "key=value" lines in a fixed order; the digest hashes this text.
  std::string canonical() const;
  std::uint64_t digest() const;
  static ModelSpec from_canonical(std::string_view text);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// The factorizable layer set, in model order.
std::vector<LayerSpec> enumerate_layers(const ModelSpec& spec);
// Parameters outside the factorizable weights: embeddings, biases, norms, head.
std::uint64_t fixed_param_count(const ModelSpec& spec);

inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kFirstSymbol = 2;

struct Batch {
  std::size_t size = 0;
  std::size_t src_len = 0;  // padded length
  std::size_t tgt_len = 0;
  std::vector<int> src;      // size x src_len
  std::vector<int> tgt_in;   // BOS-shifted targets
  std::vector<int> tgt_out;  // labels
  std::vector<std::size_t> src_lengths;
  std::vector<std::size_t> tgt_lengths;

  // Copies of every sequence repeated `times` times.
  Batch repeated(std::size_t times) const;
};

enum class TaskKind : std::uint8_t { copy, reverse, modular_sum };
std::string_view to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view s);

// Seeded sequence-to-sequence tasks. Training and evaluation batches come
// from disjoint seed streams.
struct SyntheticTask {
  TaskKind kind = TaskKind::copy;
  std::size_t seq_len = 24;
  std::size_t min_len = 24;  // lengths are drawn uniformly from [min_len, seq_len]
  std::size_t vocab = 32;
  std::uint64_t seed = 0;

  void validate() const;
  Batch train_batch(std::size_t epoch, std::size_t step, std::size_t batch_size) const;
  Batch eval_batch(std::size_t index, std::size_t batch_size) const;
  Batch make_batch(std::uint64_t stream_seed, std::size_t batch_size) const;
};

enum class TensorKind : std::uint8_t { dense = 0, factor_u = 1, factor_v = 2, bias = 3, norm = 4 };
std::string_view to_string(TensorKind k);

template <typename T>
struct ParamRef {
  std::string name;
  TensorKind kind;
  std::size_t rows;
  std::size_t cols;
  std::span<T> value;
};

template <typename T>
struct GradientSet {
  std::vector<std::string> names;
  std::vector<BasicMatrix<T>> tensors;  // aligned with Model::parameters()

  double global_norm() const;
  void scale(T s);
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::string id, DenseLinear<T> layer) : id_(std::move(id)), impl_(std::move(layer)) {}
  Linear(std::string id, FactorizedLinear<T> layer) : id_(std::move(id)), impl_(std::move(layer)) {}

  const std::string& id() const noexcept { return id_; }
  bool factorized() const noexcept { return std::holds_alternative<FactorizedLinear<T>>(impl_); }
  const DenseLinear<T>& dense() const { return std::get<DenseLinear<T>>(impl_); }
  const FactorizedLinear<T>& low_rank() const { return std::get<FactorizedLinear<T>>(impl_); }
  DenseLinear<T>& dense() { return std::get<DenseLinear<T>>(impl_); }
  FactorizedLinear<T>& low_rank() { return std::get<FactorizedLinear<T>>(impl_); }
  std::size_t out_dim() const;
  std::size_t in_dim() const;
  std::size_t rank() const;

  BasicMatrix<T> forward(const BasicMatrix<T>& x) const;
  // Writes weight/bias gradients at this layer's parameter slots and
  // returns the input gradient.
  BasicMatrix<T> backward(const BasicMatrix<T>& x, const BasicMatrix<T>& grad_out, GradientSet<T>& grads) const;

  std::size_t param_index = 0;

 private:
  std::string id_;
  std::variant<DenseLinear<T>, FactorizedLinear<T>> impl_;
};

template <typename T>
struct LayerNorm {
  std::string id;
  std::vector<T> gamma;
  std::vector<T> beta;
  std::size_t param_index = 0;
};

template <typename T>
struct Attention {
  Linear<T> q, k, v, o;
};

template <typename T>
struct FeedForward {
  Linear<T> in, out;
};

template <typename T>
struct EncoderBlock {
  LayerNorm<T> ln1;
  Attention<T> attn;
  LayerNorm<T> ln2;
  FeedForward<T> ffn;
};

template <typename T>
struct DecoderBlock {
  LayerNorm<T> ln1;
  Attention<T> self_attn;
  LayerNorm<T> ln2;
  Attention<T> cross_attn;
  LayerNorm<T> ln3;
  FeedForward<T> ffn;
};

namespace detail {

template <typename T>
struct NormCache {
  BasicMatrix<T> xhat;
  std::vector<T> rstd;
};

template <typename T>
struct AttentionCache {
  BasicMatrix<T> q_t, k_t, v_t;  // token-major projections
  std::vector<T> probs;          // [seq][head][query][key]
  BasicMatrix<T> context;        // input of the output projection
};

template <typename T>
struct FeedForwardCache {
  BasicMatrix<T> input;
  BasicMatrix<T> pre;  // before GELU
  BasicMatrix<T> act;
};

template <typename T>
struct EncoderCache {
  NormCache<T> ln1;
  BasicMatrix<T> a1;
  AttentionCache<T> attn;
  NormCache<T> ln2;
  FeedForwardCache<T> ffn;
};

template <typename T>
struct DecoderCache {
  NormCache<T> ln1;
  BasicMatrix<T> a1;
  AttentionCache<T> self_attn;
  NormCache<T> ln2;
  BasicMatrix<T> a2;
  AttentionCache<T> cross_attn;
  NormCache<T> ln3;
  FeedForwardCache<T> ffn;
};

}  // namespace detail

template <typename T>
struct ForwardCache {
  const void* model = nullptr;
  std::uint64_t model_version = 0;
  Batch batch;
  std::vector<detail::EncoderCache<T>> encoder;
  detail::NormCache<T> enc_final;
  BasicMatrix<T> memory;  // encoder output
  std::vector<detail::DecoderCache<T>> decoder;
  detail::NormCache<T> dec_final;
  BasicMatrix<T> head_input;
  BasicMatrix<T> probs;  // softmax of logits, vocab x tokens
  std::size_t target_count = 0;

  std::uint64_t activation_elements() const;
};

template <typename T>
struct ForwardResult {
  double loss = 0.0;
  std::size_t correct = 0;  // argmax hits over target tokens
  std::size_t targets = 0;
  ForwardCache<T> cache;
};

template <typename T>
class Model {
 public:
  // Dense layers get Kaiming-uniform weights. Factorized layers are
  // spectrally initialized from a freshly drawn dense matrix, which is then
  // dropped. Each tensor draws from its own seed stream, so the dense and
  // factorized builds of one spec see identical base matrices.
  static Model build(const ModelSpec& spec, const RankPlan& plan);
  static Model build_full_rank(const ModelSpec& spec);

  const ModelSpec& spec() const noexcept { return spec_; }

  std::vector<ParamRef<T>> parameters();
  std::vector<ParamRef<const T>> parameters() const;
  std::size_t parameter_count() const;

  // Mean cross-entropy over target tokens. Throws NumericalError naming the
  // first layer whose output is non-finite.
  ForwardResult<T> forward_loss(const Batch& batch) const;
  // Throws ConsistencyError if the cache is from another model or the
  // parameters changed since it was produced.
  GradientSet<T> backward(const ForwardCache<T>& cache) const;

  GradientSet<T> zero_gradients() const;

  // Bumps the version that backward() checks caches against.
  void mark_updated() noexcept { ++version_; }
  std::uint64_t version() const noexcept { return version_; }

  std::vector<const Linear<T>*> layers() const;
  const Linear<T>* find_layer(const std::string& id) const;

  const BasicMatrix<T>& src_embedding() const noexcept { return src_embed_; }
  const Linear<T>& head() const noexcept { return head_; }
  Linear<T>& head() noexcept { return head_; }

 private:
  template <typename Self, typename F>
  static void walk(Self& self, F&& visit);
  void assign_indices();

  ModelSpec spec_;
  BasicMatrix<T> src_embed_;  // vocab x d
  BasicMatrix<T> tgt_embed_;
  std::vector<EncoderBlock<T>> encoder_;
  LayerNorm<T> enc_final_;
  std::vector<DecoderBlock<T>> decoder_;
  LayerNorm<T> dec_final_;
  Linear<T> head_;
  BasicMatrix<T> positions_;  // d x max_seq sinusoidal table
  std::uint64_t version_ = 0;
};

}  // namespace lrsms
