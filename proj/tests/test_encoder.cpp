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

#include "stale/encoder.hpp"
#include "testutil.hpp"

using stale::Index;
using stale::Mat;
using stale::ModelConfig;
using stale::ParamBinding;
using stale::ParamStore;
using stale::Rng;
using stale::Tape;
using stale::TextMode;
using staletest::fd_check;

using D = double;
using VD = Tape<D>::V;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.input_dim = 6;
  cfg.embed_dim = 8;
  cfg.token_dim = 8;
  cfg.heads = 2;
  cfg.enc_layers = 2;
  cfg.text_layers = 1;
  cfg.text_heads = 2;
  cfg.n_ctx = 3;
  cfg.n_queries = 4;
  cfg.snippets = 6;
  cfg.consistency_dim = 8;
  return cfg;
}

}  // namespace

TEST_CASE("temporal_embed: output shape is (C, T)") {
  auto cfg = small_config();
  ParamStore<D> store;
  stale::init_encoder_params(store, 3, cfg);
  Rng rng(1);
  Mat<D> E = rng.normal_mat<D>(cfg.input_dim, 9);

  Tape<D> t;
  ParamBinding<D> p(t, store);
  auto F_vis = stale::temporal_embed(t, p, cfg, t.constant(E));
  CHECK(t.rows(F_vis) == cfg.embed_dim);
  CHECK(t.cols(F_vis) == 9);
  CHECK(stale::all_finite(t.val(F_vis)));
}

TEST_CASE("temporal_embed is permutation-equivariant over time") {
  auto cfg = small_config();
  ParamStore<D> store;
  stale::init_encoder_params(store, 3, cfg);
  Rng rng(2);
  const Index T = 7;
  Mat<D> E = rng.normal_mat<D>(cfg.input_dim, T);

  std::vector<Index> perm = {3, 0, 6, 1, 5, 2, 4};
  Mat<D> E_perm(cfg.input_dim, T);
  for (Index j = 0; j < T; ++j) E_perm.col(j) = E.col(perm[j]);

  auto run = [&](const Mat<D>& input) {
    Tape<D> t;
    ParamBinding<D> p(t, store);
    return Mat<D>(t.val(stale::temporal_embed(t, p, cfg, t.constant(input))));
  };
  Mat<D> out = run(E);
  Mat<D> out_perm = run(E_perm);
  for (Index j = 0; j < T; ++j)
    CHECK((out_perm.col(j) - out.col(perm[j])).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("positional encoding flag breaks permutation equivariance") {
  auto cfg = small_config();
  cfg.positional_encoding = true;
  ParamStore<D> store;
  stale::init_encoder_params(store, 3, cfg);
  Rng rng(3);
  Mat<D> E = rng.normal_mat<D>(cfg.input_dim, 5);
  Mat<D> E_swapped = E;
  E_swapped.col(0).swap(E_swapped.col(4));

  auto run = [&](const Mat<D>& input) {
    Tape<D> t;
    ParamBinding<D> p(t, store);
    return Mat<D>(t.val(stale::temporal_embed(t, p, cfg, t.constant(input))));
  };
  Mat<D> a = run(E);
  Mat<D> b = run(E_swapped);
  CHECK((a.col(0) - b.col(4)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("temporal_embed with zero layers is the bare projection") {
  auto cfg = small_config();
  cfg.enc_layers = 0;
  ParamStore<D> store;
  stale::init_encoder_params(store, 3, cfg);
  Rng rng(4);
  Mat<D> E = rng.normal_mat<D>(cfg.input_dim, 5);

  Tape<D> t;
  ParamBinding<D> p(t, store);
  auto F_vis = stale::temporal_embed(t, p, cfg, t.constant(E));
  Mat<D> expect = store.at("frontend.proj.W") * E +
                  store.at("frontend.proj.b").replicate(1, 5);
  CHECK(t.val(F_vis) == expect);
}

TEST_CASE("temporal_embed rejects mismatched feature rows") {
  auto cfg = small_config();
  ParamStore<D> store;
  stale::init_encoder_params(store, 3, cfg);
  Tape<D> t;
  ParamBinding<D> p(t, store);
  CHECK_THROWS_AS(
      stale::temporal_embed(t, p, cfg,
                            t.constant(Mat<D>::Zero(cfg.input_dim + 1, 4))),
      stale::DataError);
}

TEST_CASE("text_embed: shape (C', K+1) and deterministic per token") {
  auto cfg = small_config();
  ParamStore<D> store;
  stale::init_encoder_params(store, 3, cfg);
  Rng rng(5);
  const Index K = 4;
  Mat<D> tokens = rng.normal_mat<D>(K, cfg.token_dim);
  tokens.row(2) = tokens.row(0);  // duplicate class names

  Tape<D> t;
  ParamBinding<D> p(t, store);
  auto F_lan = stale::text_embed(t, p, cfg, tokens);
  CHECK(t.rows(F_lan) == cfg.token_dim);
  CHECK(t.cols(F_lan) == K + 1);
  CHECK(t.val(F_lan).col(0) == t.val(F_lan).col(2));
  CHECK(t.val(F_lan).col(0) != t.val(F_lan).col(1));
}

TEST_CASE("text_embed degenerate config: identity encoder, no contexts") {
  auto cfg = small_config();
  cfg.text_layers = 0;
  cfg.n_ctx = 0;
  ParamStore<D> store;
  stale::init_encoder_params(store, 3, cfg);
  Rng rng(6);
  Mat<D> tokens = rng.normal_mat<D>(3, cfg.token_dim);

  Tape<D> t;
  ParamBinding<D> p(t, store);
  auto F_lan = stale::text_embed(t, p, cfg, tokens);
  for (Index k = 0; k < 3; ++k)
    CHECK(t.val(F_lan).col(k) == tokens.row(k).transpose());
  CHECK(t.val(F_lan).col(3) == store.at("prompt.bg"));
}

TEST_CASE("text_embed additive mode adds the mean context") {
  auto cfg = small_config();
  cfg.text_mode = TextMode::kAdditive;
  ParamStore<D> store;
  stale::init_encoder_params(store, 3, cfg);
  Rng rng(7);
  Mat<D> tokens = rng.normal_mat<D>(2, cfg.token_dim);

  Tape<D> t;
  ParamBinding<D> p(t, store);
  auto F_lan = stale::text_embed(t, p, cfg, tokens);
  Eigen::VectorXd mean_ctx = store.at("prompt.ctx").rowwise().mean();
  CHECK((t.val(F_lan).col(0) - (tokens.row(0).transpose() + mean_ctx))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  CHECK((t.val(F_lan).col(2) - (store.at("prompt.bg") + mean_ctx))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("text_embed rejects over-long context") {
  auto cfg = small_config();
  ParamStore<D> store;
  stale::init_encoder_params(store, 3, cfg);
  cfg.max_text_len = 3;  // 3 contexts + 1 token > 3
  Tape<D> t;
  ParamBinding<D> p(t, store);
  CHECK_THROWS_AS(
      stale::text_embed(t, p, cfg, Mat<D>(Mat<D>::Zero(2, cfg.token_dim))),
      stale::DataError);
}

TEST_CASE("encoder gradients match finite differences (T=6, C=8)") {
  auto cfg = small_config();
  cfg.enc_layers = 1;  // keep the probe cheap
  ParamStore<D> store;
  stale::init_encoder_params(store, 3, cfg);
  Rng rng(8);
  Mat<D> E = rng.normal_mat<D>(cfg.input_dim, 6);
  Mat<D> tokens = rng.normal_mat<D>(2, cfg.token_dim);

  std::vector<std::string> names;
  std::vector<Mat<D>> inputs;
  for (const auto& [name, m] : store.tensors()) {
    names.push_back(name);
    inputs.push_back(m);
  }
  inputs.push_back(E);

  auto rep = fd_check(
      inputs,
      [&](Tape<D>& t, const std::vector<VD>& v) {
        ParamStore<D> unused;
        ParamBinding<D> p(t, unused);
        for (std::size_t i = 0; i < names.size(); ++i) p.bind(names[i], v[i]);
        auto F_vis = stale::temporal_embed(t, p, cfg, v[names.size()]);
        auto F_lan = stale::text_embed(t, p, cfg, tokens);
        Rng wrng(77);
        Mat<D> w1 = wrng.normal_mat<D>(cfg.embed_dim, 6);
        Mat<D> w2 = wrng.normal_mat<D>(cfg.token_dim, 3);
        return t.add(t.sum_all(t.mul(F_vis, t.constant(w1))),
                     t.sum_all(t.mul(F_lan, t.constant(w2))));
      },
      1e-5, 10);
  INFO(rep.worst);
  CHECK(rep.max_rel_err < 1e-4);
}
