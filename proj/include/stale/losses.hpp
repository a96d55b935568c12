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

#include <algorithm>
#include <numeric>
#include <vector>

#include "stale/config.hpp"
#include "stale/datamodel.hpp"
#include "stale/model.hpp"

namespace stale {

inline constexpr double kLossEps = 1e-8;   // log clamping everywhere
inline constexpr double kLambdaDice = 0.4;  // mask-loss dice trade-off

template <class S>
struct LossBreakdown {
  S l_class = 0, l_mask = 0, l_comp = 0, l_const = 0, total = 0;
};

struct LossToggles {
  bool use_class = true;
  bool use_mask = true;
  bool use_comp = true;
  bool use_consistency = true;
};

template <class S>
struct LossGraph {
  V<S> l_class, l_mask, l_comp, l_const;  // invalid when toggled off
  V<S> total;
  bool consistency_degenerate = false;  // no surviving snippets in a branch
};

// Classification cross entropy, averaged over snippets.
template <class S>
V<S> loss_class(Tape<S>& t, V<S> P, const Mat<S>& y) {
  require(t.rows(P) == y.rows() && t.cols(P) == y.cols(),
          "loss_class: P and y shapes differ");
  const Index T = y.cols();
  V<S> ce = t.sum_all(t.mul(t.constant(y), t.log_eps(P, S(kLossEps))));
  return t.scale(ce, S(-1) / static_cast<S>(T));
}

// Mask loss over action-snippet columns: per-column weighted BCE with
// inverse-proportion weights, plus the dice term written with a plain
// (not doubled) intersection numerator. Background columns carry no
// instance mask and are excluded.
template <class S>
V<S> loss_mask(Tape<S>& t, V<S> M, const Mat<S>& G, const Mat<S>& y) {
  const Index T = G.rows();
  require(t.rows(M) == T && t.cols(M) == G.cols(),
          "loss_mask: M and G shapes differ");
  require(y.cols() == T, "loss_mask: y and G disagree on T");
  const Index K = y.rows() - 1;

  std::vector<Index> supervised;
  for (Index c = 0; c < T; ++c)
    if (y(K, c) == S(0) && G.col(c).sum() > S(0)) supervised.push_back(c);
  if (supervised.empty()) return t.constant(Mat<S>::Zero(1, 1));
  const auto n = static_cast<Index>(supervised.size());

  Mat<S> G_sup(T, n), beta_fg(1, n), beta_bg(1, n), g_sq(1, n);
  for (Index j = 0; j < n; ++j) {
    G_sup.col(j) = G.col(supervised[static_cast<std::size_t>(j)]);
    const S fg = G_sup.col(j).sum();
    const S bg = static_cast<S>(T) - fg;
    beta_fg(0, j) = static_cast<S>(T) / fg;
    beta_bg(0, j) = bg > S(0) ? static_cast<S>(T) / bg : S(0);
    g_sq(0, j) = fg;  // sum of g^2 for binary g
  }

  V<S> M_sup = t.select_cols(M, supervised);
  V<S> ones = t.constant(Mat<S>::Ones(T, n));
  V<S> g = t.constant(G_sup);
  V<S> g_inv = t.constant(Mat<S>(Mat<S>::Ones(T, n) - G_sup));

  V<S> fg_term = t.mul(t.colwise_sum(t.mul(g, t.log_eps(M_sup, S(kLossEps)))),
                       t.constant(beta_fg));
  V<S> bg_term = t.mul(
      t.colwise_sum(t.mul(g_inv, t.log_eps(t.sub(ones, M_sup), S(kLossEps)))),
      t.constant(beta_bg));
  V<S> bce = t.scale(t.sum_all(t.add(fg_term, bg_term)),
                     S(-1) / static_cast<S>(T * n));

  V<S> numer = t.colwise_sum(t.mul(M_sup, g));
  V<S> denom = t.add(t.colwise_sum(t.square(M_sup)), t.constant(g_sq));
  V<S> dice_cols = t.sub(t.constant(Mat<S>::Ones(1, n)),
                         t.div(numer, denom));
  V<S> dice = t.scale(t.sum_all(dice_cols),
                      S(kLambdaDice) / static_cast<S>(n));
  return t.add(bce, dice);
}

// 1-D action completeness: plain BCE between the foreground score and
// the ground-truth foreground union.
template <class S>
V<S> loss_completeness(Tape<S>& t, V<S> L_hat, const Mat<S>& fg) {
  require(t.rows(L_hat) == 1 && fg.rows() == 1 &&
              t.cols(L_hat) == fg.cols(),
          "loss_completeness: expects (1,T) score and target");
  const Index T = fg.cols();
  V<S> ones = t.constant(Mat<S>::Ones(1, T));
  V<S> g = t.constant(fg);
  V<S> g_inv = t.constant(Mat<S>(Mat<S>::Ones(1, T) - fg));
  V<S> pos = t.sum_all(t.mul(g, t.log_eps(L_hat, S(kLossEps))));
  V<S> neg = t.sum_all(
      t.mul(g_inv, t.log_eps(t.sub(ones, L_hat), S(kLossEps))));
  return t.scale(t.add(pos, neg), S(-1) / static_cast<S>(T));
}

namespace detail {

// Top-k indices by score, descending, ties to the smaller index; only
// strictly positive scores survive.
template <class S>
std::vector<Index> topk_positive(const Vec<S>& scores, Index k) {
  std::vector<Index> idx;
  for (Index i = 0; i < scores.size(); ++i)
    if (scores(i) > S(0)) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
    return scores(a) > scores(b);
  });
  if (static_cast<Index>(idx.size()) > k)
    idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace detail

// Inter-branch consistency: both branches nominate their top-k most
// foreground-confident snippets (selection is detached); the projected
// raw-feature columns at those snippets must agree in cosine. Returns a
// zero node when either branch has no surviving snippet.
template <class S>
struct ConsistencyLoss {
  V<S> value;
  bool degenerate = false;
};

template <class S>
ConsistencyLoss<S> loss_consistency(Tape<S>& t, ParamBinding<S>& p,
                                    const ModelConfig& cfg, V<S> P, V<S> M,
                                    const Mat<S>& raw_features) {
  const Index T = t.cols(P);
  require(t.cols(M) == T && t.rows(M) == T, "loss_consistency: M not (T,T)");
  require(raw_features.cols() == T,
          "loss_consistency: raw features T mismatch");
  const Index K = t.rows(P) - 1;
  const Mat<S>& Pv = t.val(P);
  const Mat<S>& Mv = t.val(M);

  Vec<S> s_c = Vec<S>::Zero(T), s_m = Vec<S>::Zero(T);
  for (Index c = 0; c < T; ++c) {
    for (Index k = 0; k < K; ++k)
      if (Pv(k, c) >= static_cast<S>(cfg.theta_c))
        s_c(c) = std::max(s_c(c), Pv(k, c));
    S acc = 0;
    for (Index r = 0; r < T; ++r)
      if (Mv(r, c) >= static_cast<S>(cfg.theta_m)) acc += Mv(r, c);
    s_m(c) = acc / static_cast<S>(T);
  }
  const auto idx_c = detail::topk_positive(s_c, cfg.top_k);
  const auto idx_m = detail::topk_positive(s_m, cfg.top_k);
  if (idx_c.empty() || idx_m.empty())
    return {t.constant(Mat<S>::Zero(1, 1)), true};

  V<S> E = t.constant(raw_features);
  V<S> E_p = nn::conv1d3(t, p, "cons.clf", E);
  V<S> E_m = nn::conv1d3(t, p, "cons.mask", E);
  V<S> f_clf = t.scale(t.rowwise_sum(t.select_cols(E_p, idx_c)),
                       S(1) / static_cast<S>(idx_c.size()));
  V<S> f_mask = t.scale(t.rowwise_sum(t.select_cols(E_m, idx_m)),
                        S(1) / static_cast<S>(idx_m.size()));
  V<S> one = t.constant(Mat<S>::Ones(1, 1));
  return {t.sub(one, t.cosine(f_clf, f_mask)), false};
}

// L = L_c + L_m + L_comp + L_const, each term subject to its toggle.
template <class S>
LossGraph<S> total_loss(Tape<S>& t, ParamBinding<S>& p,
                        const ModelConfig& cfg, const ForwardGraph<S>& g,
                        const DenseLabels<S>& labels,
                        const Mat<S>& raw_features,
                        const LossToggles& toggles = {}) {
  LossGraph<S> out;
  V<S> total = t.constant(Mat<S>::Zero(1, 1));
  if (toggles.use_class) {
    out.l_class = loss_class(t, g.P, labels.y);
    total = t.add(total, out.l_class);
  }
  if (toggles.use_mask) {
    out.l_mask = loss_mask(t, g.M, labels.G, labels.y);
    total = t.add(total, out.l_mask);
  }
  if (toggles.use_comp && g.L_hat.valid()) {
    out.l_comp = loss_completeness(t, g.L_hat, labels.fg);
    total = t.add(total, out.l_comp);
  }
  if (toggles.use_consistency) {
    auto cons = loss_consistency(t, p, cfg, g.P, g.M, raw_features);
    out.l_const = cons.value;
    out.consistency_degenerate = cons.degenerate;
    total = t.add(total, out.l_const);
  }
  out.total = total;
  return out;
}

template <class S>
LossBreakdown<S> extract_losses(const Tape<S>& t, const LossGraph<S>& g) {
  LossBreakdown<S> b;
  auto get = [&](V<S> v) { return v.valid() ? t.val(v)(0, 0) : S(0); };
  b.l_class = get(g.l_class);
  b.l_mask = get(g.l_mask);
  b.l_comp = get(g.l_comp);
  b.l_const = get(g.l_const);
  b.total = get(g.total);
  return b;
}

}  // namespace stale
