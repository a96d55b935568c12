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
#include <string>
#include <vector>

#include "stale/autodiff.hpp"
#include "stale/config.hpp"
#include "stale/nn.hpp"

namespace stale {

// Parameter groups, by name prefix:
//   frontend.*  input projection 2d -> C
//   enc.*       temporal transformer encoder
//   txt.*       text transformer encoder (freezable, Table-5 style)
//   prompt.ctx  learnable textual contexts G_p (always trainable)
//   prompt.bg   learnable background embedding (always trainable)
inline constexpr const char* kTextEncoderPrefix = "txt.";

template <class S>
void init_encoder_params(ParamStore<S>& p, std::uint64_t seed,
                         const ModelConfig& cfg) {
  init::linear(p, seed, "frontend.proj", cfg.embed_dim, cfg.input_dim);
  for (int l = 0; l < cfg.enc_layers; ++l)
    init::encoder_layer(p, seed, "enc." + std::to_string(l), cfg.embed_dim,
                        cfg.ffn_mult);
  if (cfg.text_mode == TextMode::kTransformer)
    for (int l = 0; l < cfg.text_layers; ++l)
      init::encoder_layer(p, seed, kTextEncoderPrefix + std::to_string(l),
                          cfg.token_dim, cfg.ffn_mult);
  if (cfg.n_ctx > 0)
    p.add("prompt.ctx",
          init::normal<S>(seed, "prompt.ctx", cfg.token_dim, cfg.n_ctx, 0.02));
  p.add("prompt.bg",
        init::normal<S>(seed, "prompt.bg", cfg.token_dim, 1, 0.02));
}

template <class S>
Mat<S> sinusoidal_positions(Index dim, Index len) {
  Mat<S> pe(dim, len);
  for (Index t = 0; t < len; ++t)
    for (Index i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -2.0 * static_cast<double>(i / 2) /
                                static_cast<double>(dim));
      const double angle = static_cast<double>(t) * rate;
      pe(i, t) = static_cast<S>(i % 2 == 0 ? std::sin(angle)
                                           : std::cos(angle));
    }
  return pe;
}

// Snippet features (2d,T) -> globally contextualized embedding (C,T).
// Self-attention over the T positions; no positional encoding unless the
// config turns it on, so the map is permutation-equivariant over time.
template <class S>
V<S> temporal_embed(Tape<S>& t, ParamBinding<S>& p, const ModelConfig& cfg,
                    V<S> snippet_features) {
  require(t.rows(snippet_features) == cfg.input_dim,
          "temporal_embed: feature rows do not match config input_dim");
  require(all_finite(t.val(snippet_features)),
          "temporal_embed: non-finite input");
  V<S> x = nn::linear(t, p, "frontend.proj", snippet_features);
  if (cfg.positional_encoding)
    x = t.add(x, t.constant(sinusoidal_positions<S>(cfg.embed_dim,
                                                    t.cols(x))));
  for (int l = 0; l < cfg.enc_layers; ++l)
    x = nn::encoder_layer(t, p, "enc." + std::to_string(l), x, cfg.heads);
  return x;
}

// Class-name tokens (K, C') -> text embedding columns (C', K+1); the
// last column is the learned background class. Each class encodes the
// sequence [contexts..., class token] and keeps the final position.
template <class S>
V<S> text_embed(Tape<S>& t, ParamBinding<S>& p, const ModelConfig& cfg,
                const Mat<S>& class_tokens) {
  require(class_tokens.rows() >= 1, "text_embed: need at least one class");
  require(class_tokens.cols() == cfg.token_dim,
          "text_embed: token width must equal C'");
  require(cfg.n_ctx + 1 <= cfg.max_text_len,
          "text_embed: context length exceeds maximum sequence length");
  const Index K = class_tokens.rows();

  std::vector<V<S>> columns;
  columns.reserve(static_cast<std::size_t>(K) + 1);

  if (cfg.text_mode == TextMode::kAdditive) {
    // precomputed-table path: contexts act additively
    V<S> mean_ctx;
    if (cfg.n_ctx > 0)
      mean_ctx = t.scale(t.rowwise_sum(p("prompt.ctx")),
                         S(1) / static_cast<S>(cfg.n_ctx));
    for (Index k = 0; k < K; ++k) {
      V<S> tok = t.constant(class_tokens.row(k).transpose());
      columns.push_back(cfg.n_ctx > 0 ? t.add(tok, mean_ctx) : tok);
    }
    V<S> bg = p("prompt.bg");
    columns.push_back(cfg.n_ctx > 0 ? t.add(bg, mean_ctx) : bg);
    return t.concat_cols(columns);
  }

  auto encode_final = [&](V<S> last_token) {
    std::vector<V<S>> seq_parts;
    if (cfg.n_ctx > 0) seq_parts.push_back(p("prompt.ctx"));
    seq_parts.push_back(last_token);
    V<S> seq = seq_parts.size() == 1 ? seq_parts[0]
                                     : t.concat_cols(seq_parts);
    for (int l = 0; l < cfg.text_layers; ++l)
      seq = nn::encoder_layer(t, p, kTextEncoderPrefix + std::to_string(l),
                              seq, cfg.text_heads);
    return t.slice_cols(seq, t.cols(seq) - 1, 1);
  };

  for (Index k = 0; k < K; ++k)
    columns.push_back(
        encode_final(t.constant(class_tokens.row(k).transpose())));
  columns.push_back(encode_final(p("prompt.bg")));
  return t.concat_cols(columns);
}

}  // namespace stale
