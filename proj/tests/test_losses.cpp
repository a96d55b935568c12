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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "stale/losses.hpp"
#include "testutil.hpp"

using stale::Index;
using stale::kLossEps;
using stale::Mat;
using stale::ModelConfig;
using stale::ParamBinding;
using stale::ParamStore;
using stale::Rng;
using stale::Tape;
using stale::Vec;
using staletest::fd_check;

using D = double;
using VD = Tape<D>::V;

namespace {

constexpr double kLn2 = 0.6931471805599453;
constexpr double kLn4 = 1.3862943611198906;

// Direct scalar evaluation of the mask objective: per supervised column,
// inverse-proportion weighted BCE plus the dice term with the un-doubled
// intersection numerator. Deliberately loop-based and independent of the
// tape implementation.
double mask_loss_oracle(const Mat<D>& M, const Mat<D>& G, const Mat<D>& y) {
  const Index T = G.rows();
  const Index K = y.rows() - 1;
  double total = 0.0;
  int cols = 0;
  for (Index c = 0; c < T; ++c) {
    if (y(K, c) != 0.0) continue;
    double fg = 0.0;
    for (Index t = 0; t < T; ++t) fg += G(t, c);
    if (fg == 0.0) continue;
    const double bg = static_cast<double>(T) - fg;
    const double beta_fg = static_cast<double>(T) / fg;
    const double beta_bg = bg > 0.0 ? static_cast<double>(T) / bg : 0.0;
    double bce = 0.0;
    double num = 0.0, den = 0.0;
    for (Index t = 0; t < T; ++t) {
      const double m = M(t, c), g = G(t, c);
      bce += beta_fg * g * std::log(m + kLossEps) +
             beta_bg * (1.0 - g) * std::log(1.0 - m + kLossEps);
      num += m * g;
      den += m * m + g * g;
    }
    total += -bce / static_cast<double>(T) + 0.4 * (1.0 - num / den);
    ++cols;
  }
  return cols > 0 ? total / cols : 0.0;
}

double eval_mask_loss(const Mat<D>& M, const Mat<D>& G, const Mat<D>& y) {
  Tape<D> t;
  return t.val(stale::loss_mask(t, t.leaf(M, false), G, y))(0, 0);
}

ModelConfig consistency_config(Index T) {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.embed_dim = 8;
  cfg.token_dim = 8;
  cfg.consistency_dim = 6;
  cfg.top_k = 10;
  cfg.snippets = T;
  return cfg;
}

}  // namespace

TEST_CASE("loss_class: perfect, uniform, nonnegative") {
  const Index T = 5;
  Mat<D> y = Mat<D>::Zero(4, T);
  for (Index c = 0; c < T; ++c) y(c % 4, c) = 1.0;

  Tape<D> t;
  CHECK(t.val(stale::loss_class(t, t.leaf(y, false), y))(0, 0) ==
        Catch::Approx(0.0).margin(1e-6));

  Mat<D> uniform = Mat<D>::Constant(4, T, 0.25);
  CHECK(t.val(stale::loss_class(t, t.leaf(uniform, false), y))(0, 0) ==
        Catch::Approx(kLn4).margin(1e-6));

  Rng rng(1);
  Mat<D> logits = rng.normal_mat<D>(4, T);
  Mat<D> P(4, T);
  for (Index c = 0; c < T; ++c) {
    Eigen::VectorXd e =
        (logits.col(c).array() - logits.col(c).maxCoeff()).exp();
    P.col(c) = e / e.sum();
  }
  CHECK(t.val(stale::loss_class(t, t.leaf(P, false), y))(0, 0) >= 0.0);
}

TEST_CASE("loss_mask: exact binary match leaves only the 0.2 dice term") {
  const Index T = 10;
  Mat<D> G = Mat<D>::Zero(T, T);
  Mat<D> y = Mat<D>::Zero(3, T);
  Vec<D> mask = Vec<D>::Zero(T);
  mask.segment(2, 4).setOnes();  // one instance covering snippets 2..5
  for (Index c = 0; c < T; ++c) {
    if (mask(c) == 1.0) {
      G.col(c) = mask;
      y(0, c) = 1.0;
    } else {
      y(2, c) = 1.0;
    }
  }
  Mat<D> M = G;  // predictions equal the ground truth exactly
  CHECK(eval_mask_loss(M, G, y) == Catch::Approx(0.2).margin(1e-6));
}

TEST_CASE("loss_mask: uninformative 0.5 prediction gives 2 ln 2 BCE") {
  const Index T = 8;
  Mat<D> G = Mat<D>::Zero(T, T);
  Mat<D> y = Mat<D>::Zero(2, T);
  Vec<D> mask = Vec<D>::Zero(T);
  mask.segment(1, 3).setOnes();
  for (Index c = 0; c < T; ++c) {
    if (mask(c) == 1.0) {
      G.col(c) = mask;
      y(0, c) = 1.0;
    } else {
      y(1, c) = 1.0;
    }
  }
  Mat<D> M = Mat<D>::Constant(T, T, 0.5);
  // dice per column: 1 - (0.5*3) / (0.25*8 + 3)
  const double dice = 0.4 * (1.0 - 1.5 / (2.0 + 3.0));
  CHECK(eval_mask_loss(M, G, y) ==
        Catch::Approx(2.0 * kLn2 + dice).margin(1e-6));
}

TEST_CASE("loss_mask matches the scalar oracle on random instances") {
  Rng rng(2);
  for (int rep = 0; rep < 30; ++rep) {
    const Index T = 16;
    Mat<D> G = Mat<D>::Zero(T, T);
    Mat<D> y = Mat<D>::Zero(4, T);
    const int n_inst = 1 + static_cast<int>(rng.next_below(2));
    std::vector<std::pair<Index, Index>> spans;
    if (n_inst == 1) {
      spans.push_back({2, 6});
    } else {
      spans.push_back({1, 4});
      spans.push_back({9, 14});
    }
    for (Index c = 0; c < T; ++c) y(3, c) = 1.0;
    for (const auto& [a, b] : spans) {
      Vec<D> mask = Vec<D>::Zero(T);
      for (Index r = a; r < b; ++r) mask(r) = 1.0;
      for (Index c = a; c < b; ++c) {
        G.col(c) = mask;
        y.col(c).setZero();
        y(static_cast<Index>(rng.next_below(3)), c) = 1.0;
      }
    }
    Mat<D> M(T, T);
    for (Index i = 0; i < T; ++i)
      for (Index j = 0; j < T; ++j) M(i, j) = rng.uniform(0.01, 0.99);

    CHECK(eval_mask_loss(M, G, y) ==
          Catch::Approx(mask_loss_oracle(M, G, y)).margin(1e-9));
  }
}

TEST_CASE("loss_mask: all-ones mask drops the background term; all-zero "
          "columns are skipped") {
  const Index T = 6;
  Mat<D> G = Mat<D>::Ones(T, T);
  Mat<D> y = Mat<D>::Zero(2, T);
  y.row(0).setOnes();
  Mat<D> M = Mat<D>::Constant(T, T, 0.7);
  const double expect = -std::log(0.7 + kLossEps) +
                        0.4 * (1.0 - (0.7 * 6) / (0.49 * 6 + 6));
  CHECK(eval_mask_loss(M, G, y) == Catch::Approx(expect).margin(1e-9));

  Mat<D> G0 = Mat<D>::Zero(T, T);
  Mat<D> y0 = Mat<D>::Zero(2, T);
  y0.row(1).setOnes();
  CHECK(eval_mask_loss(M, G0, y0) == 0.0);
}

TEST_CASE("loss_completeness: perfect, uninformative, nonnegative") {
  const Index T = 7;
  Mat<D> fg(1, T);
  fg << 0, 1, 1, 0, 0, 1, 0;
  Tape<D> t;
  Mat<D> clamped =
      fg.unaryExpr([](double v) { return v == 1.0 ? 1.0 - 1e-9 : 1e-9; });
  CHECK(t.val(stale::loss_completeness(t, t.leaf(clamped, false), fg))(0, 0) ==
        Catch::Approx(0.0).margin(1e-6));

  Mat<D> half = Mat<D>::Constant(1, T, 0.5);
  CHECK(t.val(stale::loss_completeness(t, t.leaf(half, false), fg))(0, 0) ==
        Catch::Approx(kLn2).margin(1e-6));

  Rng rng(3);
  Mat<D> random(1, T);
  for (Index i = 0; i < T; ++i) random(0, i) = rng.uniform(0.01, 0.99);
  CHECK(t.val(stale::loss_completeness(t, t.leaf(random, false), fg))(0, 0) >=
        0.0);
}

namespace {

struct ConsistencyFixture {
  ModelConfig cfg = consistency_config(6);
  ParamStore<D> store;
  Mat<D> E;
  Mat<D> P;
  Mat<D> M;

  ConsistencyFixture() {
    stale::init_model_params(store, 21, cfg);
    Rng rng(9);
    E = rng.normal_mat<D>(cfg.input_dim, 6);
    // columns 1 and 3 are confidently foreground in both branches
    P = Mat<D>::Constant(3, 6, 0.1);
    P(0, 1) = 0.9;
    P(1, 3) = 0.8;
    M = Mat<D>::Constant(6, 6, 0.1);
    M.col(1).setConstant(0.9);
    M.col(3).setConstant(0.8);
  }

  double eval() {
    Tape<D> t;
    ParamBinding<D> p(t, store);
    auto res = stale::loss_consistency(t, p, cfg, t.leaf(P, false),
                                       t.leaf(M, false), E);
    return t.val(res.value)(0, 0);
  }
};

}  // namespace

TEST_CASE("loss_consistency: tied projections and matching top-k give 0") {
  ConsistencyFixture fx;
  fx.store.at("cons.mask.W") = fx.store.at("cons.clf.W");
  fx.store.at("cons.mask.b") = fx.store.at("cons.clf.b");
  CHECK(fx.eval() == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("loss_consistency: antiparallel projections give 2") {
  ConsistencyFixture fx;
  fx.store.at("cons.mask.W") = -fx.store.at("cons.clf.W");
  fx.store.at("cons.clf.b").setZero();
  fx.store.at("cons.mask.b").setZero();
  CHECK(fx.eval() == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("loss_consistency: range [0,2] and shared-scale invariance") {
  ConsistencyFixture fx;
  const double base = fx.eval();
  CHECK(base >= 0.0);
  CHECK(base <= 2.0);

  fx.store.at("cons.clf.W") *= 3.7;
  fx.store.at("cons.clf.b") *= 3.7;
  fx.store.at("cons.mask.W") *= 3.7;
  fx.store.at("cons.mask.b") *= 3.7;
  CHECK(fx.eval() == Catch::Approx(base).margin(1e-6));
}

TEST_CASE("loss_consistency: no survivors is a logged zero") {
  ConsistencyFixture fx;
  fx.P.setConstant(0.1);  // nothing clears theta_c
  Tape<D> t;
  ParamBinding<D> p(t, fx.store);
  auto res = stale::loss_consistency(t, p, fx.cfg, t.leaf(fx.P, false),
                                     t.leaf(fx.M, false), fx.E);
  CHECK(res.degenerate);
  CHECK(t.val(res.value)(0, 0) == 0.0);
}

TEST_CASE("loss_consistency: fewer survivors than k uses all of them") {
  ConsistencyFixture fx;
  fx.cfg.top_k = 50;  // far more than the two qualifying columns
  CHECK(std::isfinite(fx.eval()));
}

TEST_CASE("losses differentiate through the tape") {
  const Index T = 5;
  Rng rng(4);
  Mat<D> y = Mat<D>::Zero(3, T);
  Mat<D> G = Mat<D>::Zero(T, T);
  Vec<D> mask = Vec<D>::Zero(T);
  mask.segment(1, 2).setOnes();
  for (Index c = 0; c < T; ++c) {
    if (mask(c) == 1.0) {
      y(0, c) = 1.0;
      G.col(c) = mask;
    } else {
      y(2, c) = 1.0;
    }
  }
  Mat<D> fg = mask.transpose();

  std::vector<Mat<D>> inputs = {rng.normal_mat<D>(3, T),
                                rng.normal_mat<D>(T, T),
                                rng.normal_mat<D>(1, T)};
  auto rep = fd_check(inputs, [&](Tape<D>& t, const std::vector<VD>& v) {
    VD P = t.softmax_cols(v[0]);
    VD M = t.sigmoid(v[1]);
    VD L = t.sigmoid(v[2]);
    VD loss = t.add(stale::loss_class(t, P, y), stale::loss_mask(t, M, G, y));
    return t.add(loss, stale::loss_completeness(t, L, fg));
  });
  INFO(rep.worst);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("total loss is the sum of its reported components") {
  ModelConfig cfg;
  cfg.input_dim = 6;
  cfg.embed_dim = 8;
  cfg.token_dim = 8;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.text_layers = 1;
  cfg.text_heads = 2;
  cfg.n_ctx = 2;
  cfg.n_queries = 4;
  cfg.dec_layers = 1;
  cfg.snippets = 6;
  cfg.consistency_dim = 8;
  cfg.theta_c = 0.2;  // ensure survivors at random init
  ParamStore<D> store;
  stale::init_model_params(store, 31, cfg);

  Rng rng(5);
  Mat<D> E = rng.normal_mat<D>(cfg.input_dim, 6);
  Mat<D> tokens = rng.normal_mat<D>(2, cfg.token_dim);
  stale::DenseLabels<D> labels;
  labels.y = Mat<D>::Zero(3, 6);
  labels.G = Mat<D>::Zero(6, 6);
  labels.fg = Mat<D>::Zero(1, 6);
  Vec<D> mask = Vec<D>::Zero(6);
  mask.segment(2, 3).setOnes();
  for (Index c = 0; c < 6; ++c) {
    if (mask(c) == 1.0) {
      labels.y(0, c) = 1.0;
      labels.G.col(c) = mask;
      labels.fg(0, c) = 1.0;
    } else {
      labels.y(2, c) = 1.0;
    }
  }

  Tape<D> t;
  ParamBinding<D> p(t, store);
  auto g = stale::forward(t, p, cfg, E, tokens);
  auto lg = stale::total_loss(t, p, cfg, g, labels, E);
  auto b = stale::extract_losses(t, lg);
  CHECK(b.total == Catch::Approx(b.l_class + b.l_mask + b.l_comp + b.l_const)
                       .margin(1e-9));
  CHECK(b.l_class >= 0.0);
  CHECK(b.l_mask >= 0.0);
  CHECK(b.l_comp >= 0.0);
  CHECK(b.l_const >= 0.0);
  CHECK(b.l_const <= 2.0);

  stale::LossToggles off;
  off.use_class = off.use_mask = off.use_comp = off.use_consistency = false;
  auto lg_off = stale::total_loss(t, p, cfg, g, labels, E, off);
  CHECK(t.val(lg_off.total)(0, 0) == 0.0);
}
