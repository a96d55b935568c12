// Copyright 2026 The stale-lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "stale/autodiff.hpp"
#include "stale/common.hpp"
#include "stale/rng.hpp"

namespace stale {

// Named parameter tensors. std::map keeps iteration order deterministic,
// and every tensor is initialized from a substream keyed by its own name,
// so initialization does not depend on registration order.
template <class S>
class ParamStore {
 public:
  Mat<S>& at(const std::string& name) {
    auto it = tensors_.find(name);
    require(it != tensors_.end(), "unknown parameter: " + name);
    return it->second;
  }
  const Mat<S>& at(const std::string& name) const {
    auto it = tensors_.find(name);
    require(it != tensors_.end(), "unknown parameter: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return tensors_.count(name) > 0; }
  void add(const std::string& name, Mat<S> value) {
    require(tensors_.emplace(name, std::move(value)).second,
            "duplicate parameter: " + name);
  }
  std::map<std::string, Mat<S>>& tensors() { return tensors_; }
  const std::map<std::string, Mat<S>>& tensors() const { return tensors_; }

  std::vector<std::string> names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, m] : tensors_)
      if (name.rfind(prefix, 0) == 0) out.push_back(name);
    return out;
  }

 private:
  std::map<std::string, Mat<S>> tensors_;
};

// Binds store tensors into a tape as gradient-carrying leaves, one leaf
// per name per forward pass. Reads the store; never mutates it.
template <class S>
class ParamBinding {
 public:
  ParamBinding(Tape<S>& tape, const ParamStore<S>& store)
      : tape_(&tape), store_(&store) {}

  V<S> operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    V<S> v = tape_->leaf(store_->at(name), true);
    bound_.emplace(name, v);
    return v;
  }

  // Pre-binds a name to an existing tape node (overrides the store).
  void bind(const std::string& name, V<S> v) { bound_[name] = v; }

  const std::map<std::string, V<S>>& bound() const { return bound_; }
  Tape<S>& tape() { return *tape_; }

 private:
  Tape<S>* tape_;
  const ParamStore<S>* store_;
  std::map<std::string, V<S>> bound_;
};

namespace init {

template <class S>
Mat<S> glorot(std::uint64_t seed, const std::string& name, Index out,
              Index in) {
  Rng rng(mix_seed(seed, fnv1a64(name)));
  const double sigma = std::sqrt(2.0 / static_cast<double>(out + in));
  return rng.template normal_mat<S>(out, in, sigma);
}

template <class S>
Mat<S> normal(std::uint64_t seed, const std::string& name, Index rows,
              Index cols, double sigma) {
  Rng rng(mix_seed(seed, fnv1a64(name)));
  return rng.template normal_mat<S>(rows, cols, sigma);
}

template <class S>
void linear(ParamStore<S>& p, std::uint64_t seed, const std::string& prefix,
            Index out, Index in, bool bias = true, double scale = 1.0) {
  Mat<S> w = glorot<S>(seed, prefix + ".W", out, in);
  if (scale != 1.0) w *= static_cast<S>(scale);
  p.add(prefix + ".W", std::move(w));
  if (bias) p.add(prefix + ".b", Mat<S>::Zero(out, 1));
}

template <class S>
void layer_norm(ParamStore<S>& p, const std::string& prefix, Index dim) {
  p.add(prefix + ".g", Mat<S>::Ones(dim, 1));
  p.add(prefix + ".b", Mat<S>::Zero(dim, 1));
}

template <class S>
void attention(ParamStore<S>& p, std::uint64_t seed, const std::string& prefix,
               Index dim, Index kv_dim = -1) {
  if (kv_dim < 0) kv_dim = dim;
  linear(p, seed, prefix + ".q", dim, dim);
  linear(p, seed, prefix + ".k", dim, kv_dim);
  linear(p, seed, prefix + ".v", dim, kv_dim);
  linear(p, seed, prefix + ".o", dim, dim);
}

template <class S>
void ffn(ParamStore<S>& p, std::uint64_t seed, const std::string& prefix,
         Index dim, Index mult) {
  linear(p, seed, prefix + ".1", dim * mult, dim);
  linear(p, seed, prefix + ".2", dim, dim * mult);
}

template <class S>
void encoder_layer(ParamStore<S>& p, std::uint64_t seed,
                   const std::string& prefix, Index dim, Index ffn_mult) {
  layer_norm(p, prefix + ".ln1", dim);
  attention(p, seed, prefix + ".attn", dim);
  layer_norm(p, prefix + ".ln2", dim);
  ffn(p, seed, prefix + ".ffn", dim, ffn_mult);
}

template <class S>
void decoder_layer(ParamStore<S>& p, std::uint64_t seed,
                   const std::string& prefix, Index dim, Index mem_dim,
                   Index ffn_mult) {
  layer_norm(p, prefix + ".ln1", dim);
  attention(p, seed, prefix + ".self", dim);
  layer_norm(p, prefix + ".ln2", dim);
  attention(p, seed, prefix + ".cross", dim, mem_dim);
  layer_norm(p, prefix + ".ln3", dim);
  ffn(p, seed, prefix + ".ffn", dim, ffn_mult);
}

// Width-3 temporal convolution, stored as one (out, 3*in) weight.
template <class S>
void conv1d3(ParamStore<S>& p, std::uint64_t seed, const std::string& prefix,
             Index out, Index in) {
  linear(p, seed, prefix, out, 3 * in);
}

}  // namespace init

namespace nn {

template <class S>
V<S> linear(Tape<S>& t, ParamBinding<S>& p, const std::string& prefix,
            V<S> x) {
  return t.linear(p(prefix + ".W"), x, p(prefix + ".b"));
}

// Normalizes each column (one position) over its channel rows.
template <class S>
V<S> layer_norm(Tape<S>& t, ParamBinding<S>& p, const std::string& prefix,
                V<S> x, S eps = S(1e-5)) {
  const Index n = t.rows(x), m = t.cols(x);
  V<S> mu = t.colwise_mean(x);
  V<S> xc = t.sub(x, t.broadcast_rows(mu, n));
  V<S> var = t.colwise_mean(t.square(xc));
  V<S> inv = t.rsqrt_eps(var, eps);
  V<S> y = t.mul(xc, t.broadcast_rows(inv, n));
  y = t.mul(y, t.broadcast_cols(p(prefix + ".g"), m));
  return t.add(y, t.broadcast_cols(p(prefix + ".b"), m));
}

// Multi-head scaled dot-product attention. Positions are columns:
// q_in is (C, Tq), kv_in is (C_kv, Tk); the result is (C, Tq).
template <class S>
V<S> attention(Tape<S>& t, ParamBinding<S>& p, const std::string& prefix,
               V<S> q_in, V<S> kv_in, int heads) {
  const Index dim = t.rows(p(prefix + ".q.W"));
  require(dim % heads == 0, "attention: dim must divide into heads");
  const Index dh = dim / heads;
  V<S> Q = linear(t, p, prefix + ".q", q_in);
  V<S> K = linear(t, p, prefix + ".k", kv_in);
  V<S> Vv = linear(t, p, prefix + ".v", kv_in);
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
  std::vector<V<S>> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    V<S> Qh = t.slice_rows(Q, h * dh, dh);
    V<S> Kh = t.slice_rows(K, h * dh, dh);
    V<S> Vh = t.slice_rows(Vv, h * dh, dh);
    // scores (Tk, Tq): column j holds query j's scores over the keys
    V<S> scores = t.scale(t.matmul(t.transpose(Kh), Qh), inv_sqrt);
    V<S> attn = t.softmax_cols(scores);
    outs.push_back(t.matmul(Vh, attn));
  }
  return linear(t, p, prefix + ".o", t.concat_rows(outs));
}

template <class S>
V<S> ffn(Tape<S>& t, ParamBinding<S>& p, const std::string& prefix, V<S> x) {
  return linear(t, p, prefix + ".2", t.gelu(linear(t, p, prefix + ".1", x)));
}

// Pre-LN encoder layer: x + attn(ln(x)), then x + ffn(ln(x)).
template <class S>
V<S> encoder_layer(Tape<S>& t, ParamBinding<S>& p, const std::string& prefix,
                   V<S> x, int heads) {
  V<S> h = layer_norm(t, p, prefix + ".ln1", x);
  x = t.add(x, attention(t, p, prefix + ".attn", h, h, heads));
  x = t.add(x, ffn(t, p, prefix + ".ffn", layer_norm(t, p, prefix + ".ln2", x)));
  return x;
}

// Pre-LN decoder layer: query self-attention, cross-attention into the
// memory, then the feed-forward block.
template <class S>
V<S> decoder_layer(Tape<S>& t, ParamBinding<S>& p, const std::string& prefix,
                   V<S> q, V<S> mem, int heads) {
  V<S> h = layer_norm(t, p, prefix + ".ln1", q);
  q = t.add(q, attention(t, p, prefix + ".self", h, h, heads));
  q = t.add(q, attention(t, p, prefix + ".cross",
                         layer_norm(t, p, prefix + ".ln2", q), mem, heads));
  q = t.add(q, ffn(t, p, prefix + ".ffn", layer_norm(t, p, prefix + ".ln3", q)));
  return q;
}

// Width-3 convolution over columns with replicate padding. The weight
// is stored as (out, 3*in): column blocks are the left/center/right taps.
template <class S>
V<S> conv1d3(Tape<S>& t, ParamBinding<S>& p, const std::string& prefix,
             V<S> x) {
  const Index in = t.rows(x);
  V<S> W = p(prefix + ".W");
  V<S> y = t.matmul(t.slice_cols(W, 0, in), t.shift_cols_clamp(x, -1));
  y = t.add(y, t.matmul(t.slice_cols(W, in, in), x));
  y = t.add(y, t.matmul(t.slice_cols(W, 2 * in, in),
                        t.shift_cols_clamp(x, +1)));
  return t.add(y, t.broadcast_cols(p(prefix + ".b"), t.cols(x)));
}

}  // namespace nn
}  // namespace stale
