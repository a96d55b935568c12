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

#include "stale/encoder.hpp"

namespace stale {

// How the foreground gate behaves during the forward pass. Training and
// inference binarize hard (straight-through backward); the soft
// relaxation multiplies by the mask probability itself and exists so the
// whole model is finite-difference checkable.
enum class GateMode { kHard, kSoft };

template <class S>
struct ForwardGraph {
  V<S> F_vis;      // (C, T)
  V<S> L_q;        // (N_z, T) per-query masks
  V<S> L_hat;      // (1, T) foreground score
  V<S> F_fg;       // (C, T) gated features
  V<S> F_lan;      // (C', K+1) text embedding columns
  V<S> F_lan_hat;  // (C', K+1) after cross-modal adaptation
  V<S> P;          // (K+1, T) column-stochastic class scores
  V<S> M;          // (T, T) mask matrix, column t predicted by snippet t
  Vec<S> l_bin;    // (T) hard binarization of L_hat
};

// Extracted plain values of one forward pass.
template <class S>
struct ModelOutput {
  Mat<S> P;      // (K+1, T)
  Mat<S> M;      // (T, T)
  Vec<S> l_hat;  // (T)
  Vec<S> l_bin;  // (T)
  Mat<S> F_fg;   // (C, T)
};

template <class S>
void init_model_params(ParamStore<S>& p, std::uint64_t seed,
                       const ModelConfig& cfg) {
  cfg.validate();
  init_encoder_params(p, seed, cfg);

  // mask decoder; the mask projection starts damped so L_q opens near
  // the sigmoid midpoint instead of saturating
  p.add("dec.queries", init::normal<S>(seed, "dec.queries", cfg.embed_dim,
                                       cfg.n_queries, 0.02));
  for (int l = 0; l < cfg.dec_layers; ++l)
    init::decoder_layer(p, seed, "dec." + std::to_string(l), cfg.embed_dim,
                        cfg.embed_dim, cfg.ffn_mult);
  init::linear(p, seed, "dec.maskproj", cfg.embed_dim, cfg.embed_dim, true,
               0.1);
  init::linear(p, seed, "dec.wq", 1, cfg.n_queries, true, 0.5);

  // cross-modal adaptation; memory is F_fg projected to C' when C != C'
  if (cfg.embed_dim != cfg.token_dim)
    init::linear(p, seed, "xm.vproj", cfg.token_dim, cfg.embed_dim);
  init::decoder_layer(p, seed, "xm.layer", cfg.token_dim, cfg.token_dim,
                      cfg.ffn_mult);
  p.add("xm.alpha", Mat<S>::Constant(cfg.token_dim, 1, S(1e-3)));

  // classifier temperature (learnable, kept positive through exp)
  {
    Mat<S> log_tau(1, 1);
    log_tau(0, 0) = static_cast<S>(std::log(cfg.tau_init));
    p.add("clf.log_tau", log_tau);
  }

  // localizer: three dynamic conv layers, channels C -> C -> C -> T;
  // damped controllers and a small final head keep the stacked products
  // from saturating the output sigmoid at initialization
  const Index widths[4] = {cfg.embed_dim, cfg.embed_dim, cfg.embed_dim,
                           cfg.snippets};
  for (int l = 0; l < 3; ++l) {
    const std::string prefix = "loc." + std::to_string(l);
    init::linear(p, seed, prefix + ".ctrl", 3 * widths[l], widths[l], true,
                 0.5);
    init::linear(p, seed, prefix + ".out", widths[l + 1], widths[l], true,
                 l == 2 ? 0.1 : 1.0);
  }

  // consistency-space projections over the raw features
  init::conv1d3(p, seed, "cons.clf", cfg.consistency_dim, cfg.input_dim);
  init::conv1d3(p, seed, "cons.mask", cfg.consistency_dim, cfg.input_dim);
}

// Query-based class-agnostic mask decoding: latent query embeddings
// cross-attend to F_vis, project to mask embeddings B_q, and produce
// per-query masks L_q = sigmoid(B_q * F_vis) plus the query-weighted
// foreground score L_hat. Consumes no class information.
template <class S>
struct MaskDecoding {
  V<S> L_q;
  V<S> L_hat;
};

template <class S>
MaskDecoding<S> decode_masks(Tape<S>& t, ParamBinding<S>& p,
                             const ModelConfig& cfg, V<S> F_vis) {
  require(cfg.n_queries >= 1, "decode_masks: n_queries must be >= 1");
  V<S> q = p("dec.queries");
  for (int l = 0; l < cfg.dec_layers; ++l)
    q = nn::decoder_layer(t, p, "dec." + std::to_string(l), q, F_vis,
                          cfg.heads);
  V<S> mask_embed = nn::linear(t, p, "dec.maskproj", q);  // (C, N_z)
  V<S> L_q = t.sigmoid(t.matmul(t.transpose(mask_embed), F_vis));
  V<S> logits = t.matmul(p("dec.wq.W"), L_q);
  logits = t.add(logits, t.broadcast_scalar(p("dec.wq.b"), 1, t.cols(L_q)));
  return {L_q, t.sigmoid(logits)};
}

// Multiplicative foreground gate. Hard mode thresholds at theta_bin with
// a straight-through backward; soft mode multiplies by L_hat itself.
template <class S>
struct GateResult {
  V<S> F_fg;
  Vec<S> l_bin;
};

template <class S>
GateResult<S> gate_foreground(Tape<S>& t, V<S> F_vis, V<S> L_hat, S theta_bin,
                              GateMode mode = GateMode::kHard) {
  require(theta_bin > S(0) && theta_bin < S(1),
          "gate_foreground: theta_bin in (0,1)");
  const Index T = t.cols(F_vis);
  Vec<S> bin(T);
  for (Index i = 0; i < T; ++i)
    bin(i) = t.val(L_hat)(0, i) >= theta_bin ? S(1) : S(0);
  if (mode == GateMode::kHard)
    return {t.st_gate(F_vis, L_hat, theta_bin), bin};
  return {t.mul(F_vis, t.broadcast_rows(L_hat, t.rows(F_vis))), bin};
}

// F_fg in the text embedding space: identity when C == C', otherwise the
// shared learned projection.
template <class S>
V<S> project_visual(Tape<S>& t, ParamBinding<S>& p, const ModelConfig& cfg,
                    V<S> F_fg) {
  if (cfg.embed_dim == cfg.token_dim) return F_fg;
  return nn::linear(t, p, "xm.vproj", F_fg);
}

// Cross-modal adaptation: text columns attend into the foreground
// snippets, then re-enter through the alpha-scaled residual. alpha = 0
// returns F_lan bitwise.
template <class S>
V<S> cross_adapt(Tape<S>& t, ParamBinding<S>& p, const ModelConfig& cfg,
                 V<S> F_lan, V<S> F_fg_proj) {
  require(t.rows(F_lan) == cfg.token_dim, "cross_adapt: F_lan rows != C'");
  require(t.rows(F_fg_proj) == cfg.token_dim,
          "cross_adapt: memory rows != C'");
  V<S> adapted = nn::decoder_layer(t, p, "xm.layer", F_lan, F_fg_proj,
                                   cfg.text_heads);
  V<S> scaled = t.mul(adapted, t.broadcast_cols(p("xm.alpha"),
                                                t.cols(F_lan)));
  return t.add(F_lan, scaled);
}

// Cosine-similarity classifier with temperature softmax. Both operands
// are l2-normalized over channels; all-zero gated columns give zero
// similarity and hence a uniform distribution.
template <class S>
V<S> classify(Tape<S>& t, ParamBinding<S>& p, V<S> F_lan_hat,
              V<S> F_fg_proj) {
  require(t.rows(F_lan_hat) == t.rows(F_fg_proj),
          "classify: channel dims must match");
  V<S> sims = t.matmul(t.transpose(t.normalize_cols(F_lan_hat)),
                       t.normalize_cols(F_fg_proj));
  V<S> inv_tau = t.exp(t.neg(p("clf.log_tau")));
  V<S> scaled =
      t.mul(sims, t.broadcast_scalar(inv_tau, t.rows(sims), t.cols(sims)));
  return t.softmax_cols(scaled);
}

// One dynamic 1-D convolution layer: a linear controller turns each
// snippet's features into that location's depthwise width-3 kernel; the
// shared output projection mixes channels afterwards.
template <class S>
V<S> dynamic_conv_layer(Tape<S>& t, ParamBinding<S>& p,
                        const std::string& prefix, V<S> x) {
  const Index c = t.rows(x);
  V<S> kernels = nn::linear(t, p, prefix + ".ctrl", x);  // (3c, T)
  V<S> z = t.mul(t.slice_rows(kernels, 0, c), t.shift_cols_clamp(x, -1));
  z = t.add(z, t.mul(t.slice_rows(kernels, c, c), x));
  z = t.add(z, t.mul(t.slice_rows(kernels, 2 * c, c),
                     t.shift_cols_clamp(x, +1)));
  return nn::linear(t, p, prefix + ".out", z);
}

// Action mask localizer: three stacked dynamic conv layers ending in T
// logits per location; column t of M is the mask predicted by snippet t.
template <class S>
V<S> localize(Tape<S>& t, ParamBinding<S>& p, const ModelConfig& cfg,
              V<S> F_vis) {
  require(t.cols(F_vis) == cfg.snippets,
          "localize: config snippet count must match T");
  V<S> x = t.gelu(dynamic_conv_layer(t, p, "loc.0", F_vis));
  x = t.gelu(dynamic_conv_layer(t, p, "loc.1", x));
  return t.sigmoid(dynamic_conv_layer(t, p, "loc.2", x));
}

// Forward pass against an already-encoded text embedding, so one batch
// can share a single text branch. The classification branch and the
// mask branch both hang off F_vis with no dataflow between them.
template <class S>
ForwardGraph<S> forward_with_text(Tape<S>& t, ParamBinding<S>& p,
                                  const ModelConfig& cfg,
                                  const Mat<S>& snippet_feats, V<S> F_lan,
                                  GateMode gate = GateMode::kHard) {
  ForwardGraph<S> g;
  g.F_lan = F_lan;
  V<S> E = t.constant(snippet_feats);
  g.F_vis = temporal_embed(t, p, cfg, E);

  if (cfg.mask_gating) {
    auto dec = decode_masks(t, p, cfg, g.F_vis);
    g.L_q = dec.L_q;
    g.L_hat = dec.L_hat;
    auto gated = gate_foreground(t, g.F_vis, g.L_hat,
                                 static_cast<S>(cfg.theta_bin), gate);
    g.F_fg = gated.F_fg;
    g.l_bin = gated.l_bin;
  } else {
    // no-masking ablation: features pass through ungated
    g.F_fg = g.F_vis;
    g.l_bin = Vec<S>::Ones(t.cols(g.F_vis));
  }

  V<S> fg_proj = project_visual(t, p, cfg, g.F_fg);
  g.F_lan_hat = cross_adapt(t, p, cfg, g.F_lan, fg_proj);
  g.P = classify(t, p, g.F_lan_hat, fg_proj);
  g.M = localize(t, p, cfg, g.F_vis);
  return g;
}

// Full forward pass: text embedding plus the visual branches.
template <class S>
ForwardGraph<S> forward(Tape<S>& t, ParamBinding<S>& p,
                        const ModelConfig& cfg, const Mat<S>& snippet_feats,
                        const Mat<S>& class_tokens,
                        GateMode gate = GateMode::kHard) {
  V<S> F_lan = text_embed(t, p, cfg, class_tokens);
  return forward_with_text(t, p, cfg, snippet_feats, F_lan, gate);
}

template <class S>
ModelOutput<S> extract_output(const Tape<S>& t, const ForwardGraph<S>& g) {
  ModelOutput<S> out;
  out.P = t.val(g.P);
  out.M = t.val(g.M);
  out.l_hat = g.L_hat.valid() ? Vec<S>(t.val(g.L_hat).transpose())
                              : Vec<S>::Ones(out.M.cols());
  out.l_bin = g.l_bin;
  out.F_fg = t.val(g.F_fg);
  return out;
}

}  // namespace stale
