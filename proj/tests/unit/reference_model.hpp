// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

// Straight-line forward pass written against checkpoint tensors, one
// sequence at a time, with Eigen doing the arithmetic.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>

#include "lrsms/checkpoint.hpp"

namespace oracle {

class ReferenceModel {
 public:
  explicit ReferenceModel(const lrsms::Checkpoint& ckpt) : spec_(ckpt.spec()) {
    for (const auto& t : ckpt.tensors) {
      Eigen::MatrixXd m(t.rows, t.cols);
      for (std::size_t i = 0; i < t.rows; ++i) {
        for (std::size_t j = 0; j < t.cols; ++j) m(i, j) = t.data[i * t.cols + j];
      }
      tensors_[t.name] = m;
    }
  }

  // Mean token cross-entropy over the batch.
  double loss(const lrsms::Batch& b) const {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < b.size; ++s) {
      const std::size_t ls = b.src_lengths[s];
      const std::size_t lt = b.tgt_lengths[s];
      Eigen::MatrixXd x = embed("embed.src", &b.src[s * b.src_len], b.src_len);
      for (std::size_t blk = 0; blk < spec_.encoder_blocks; ++blk) {
        const std::string p = "enc." + std::to_string(blk) + ".";
        const Eigen::MatrixXd a = norm(p + "ln1", x);
        x += attention(p + "attn.", a, a, ls, false);
        x += ffn(p, norm(p + "ln2", x));
      }
      const Eigen::MatrixXd memory = norm("enc.final", x);
      Eigen::MatrixXd y = embed("embed.tgt", &b.tgt_in[s * b.tgt_len], b.tgt_len);
      for (std::size_t blk = 0; blk < spec_.decoder_blocks; ++blk) {
        const std::string p = "dec." + std::to_string(blk) + ".";
        const Eigen::MatrixXd a1 = norm(p + "ln1", y);
        y += attention(p + "self.", a1, a1, lt, true);
        y += attention(p + "cross.", norm(p + "ln2", y), memory, ls, false);
        y += ffn(p, norm(p + "ln3", y));
      }
      const Eigen::MatrixXd logits = linear("head", norm("dec.final", y));
      for (std::size_t t = 0; t < lt; ++t) {
        const Eigen::VectorXd z = logits.col(static_cast<Eigen::Index>(t));
        const double mx = z.maxCoeff();
        const double lse = mx + std::log((z.array() - mx).exp().sum());
        total += lse - z(b.tgt_out[s * b.tgt_len + t]);
        ++count;
      }
    }
    return total / static_cast<double>(count);
  }

 private:
  const Eigen::MatrixXd& get(const std::string& name) const { return tensors_.at(name); }

  Eigen::MatrixXd embed(const std::string& table, const int* tokens, std::size_t len) const {
    const std::size_t d = spec_.d_model;
    Eigen::MatrixXd x(d, len);
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t i = 0; i < d; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
        const double pe = i % 2 == 0 ? std::sin(t * freq) : std::cos(t * freq);
        x(i, t) = get(table)(tokens[t], i) + pe;
      }
    }
    return x;
  }

  Eigen::MatrixXd norm(const std::string& id, const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd y(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double mean = x.col(c).mean();
      const double var = (x.col(c).array() - mean).square().mean();
      y.col(c) = ((x.col(c).array() - mean) / std::sqrt(var + 1e-5)).matrix();
      y.col(c) = y.col(c).cwiseProduct(get(id + ".gamma").col(0)) + get(id + ".beta").col(0);
    }
    return y;
  }

  Eigen::MatrixXd linear(const std::string& id, const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd w;
    if (tensors_.count(id + ".w")) {
      w = get(id + ".w");
    } else {
      w = get(id + ".u") * get(id + ".v").transpose();
    }
    Eigen::MatrixXd z = w * x;
    if (tensors_.count(id + ".b")) z.colwise() += get(id + ".b").col(0);
    return z;
  }

  Eigen::MatrixXd attention(const std::string& p, const Eigen::MatrixXd& xq, const Eigen::MatrixXd& xkv,
                            std::size_t valid, bool causal) const {
    const Eigen::MatrixXd q = linear(p + "q", xq);
    const Eigen::MatrixXd k = linear(p + "k", xkv);
    const Eigen::MatrixXd v = linear(p + "v", xkv);
    const auto heads = static_cast<Eigen::Index>(spec_.n_heads);
    const Eigen::Index dh = q.rows() / heads;
    Eigen::MatrixXd ctx = Eigen::MatrixXd::Zero(q.rows(), q.cols());
    for (Eigen::Index h = 0; h < heads; ++h) {
      for (Eigen::Index i = 0; i < q.cols(); ++i) {
        const Eigen::Index keys =
            causal ? std::min<Eigen::Index>(static_cast<Eigen::Index>(valid), i + 1) : static_cast<Eigen::Index>(valid);
        Eigen::VectorXd s(keys);
        for (Eigen::Index j = 0; j < keys; ++j) {
          s(j) = q.col(i).segment(h * dh, dh).dot(k.col(j).segment(h * dh, dh)) / std::sqrt(static_cast<double>(dh));
        }
        const Eigen::VectorXd e = (s.array() - s.maxCoeff()).exp();
        const Eigen::VectorXd pr = e / e.sum();
        for (Eigen::Index j = 0; j < keys; ++j) ctx.block(h * dh, i, dh, 1) += pr(j) * v.block(h * dh, j, dh, 1);
      }
    }
    return linear(p + "o", ctx);
  }

  Eigen::MatrixXd ffn(const std::string& p, const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd h = linear(p + "ffn.in", x);
    h = h.unaryExpr([](double z) { return 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0))); });
    return linear(p + "ffn.out", h);
  }

  lrsms::ModelSpec spec_;
  std::map<std::string, Eigen::MatrixXd> tensors_;
};

}  // namespace oracle
