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

#include <filesystem>

#include "stale/trainer.hpp"
#include "testutil.hpp"

using stale::EvalMode;
using stale::Index;
using stale::Mat;
using stale::Rng;
using stale::SplitSpec;
using stale::SynthConfig;
using stale::TrainConfig;

using D = double;

namespace {

SynthConfig corpus_config(Index n_classes, Index videos_per_class) {
  SynthConfig cfg;
  cfg.n_classes = n_classes;
  cfg.latent_dim = 12;
  cfg.feature_dim = 12;
  cfg.token_dim = 16;
  cfg.videos_per_class = videos_per_class;
  cfg.t_raw = 36;
  cfg.min_instances = 1;
  cfg.max_instances = 2;
  cfg.min_instance_len = 0.15;
  cfg.max_instance_len = 0.4;
  cfg.feature_noise_sigma = 0.05;
  cfg.background_drift_sigma = 0.05;
  cfg.seed = 7;
  return cfg;
}

TrainConfig small_train_config(int epochs, std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.lr = 2e-3;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.seed = seed;
  cfg.model.input_dim = 12;
  cfg.model.embed_dim = 16;
  cfg.model.token_dim = 16;
  cfg.model.heads = 2;
  cfg.model.enc_layers = 1;
  cfg.model.text_layers = 1;
  cfg.model.text_heads = 2;
  cfg.model.n_ctx = 4;
  cfg.model.n_queries = 4;
  cfg.model.dec_layers = 1;
  cfg.model.snippets = 24;
  cfg.model.consistency_dim = 16;
  return cfg;
}

SplitSpec full_split(const std::vector<std::string>& seen,
                     const std::vector<std::string>& unseen) {
  SplitSpec s;
  s.seen = seen;
  s.unseen = unseen;
  return s;
}

}  // namespace

TEST_CASE("train with zero epochs returns the initialization") {
  auto corpus = stale::gen_corpus<D>(corpus_config(3, 1));
  auto cfg = small_train_config(0);
  auto split = full_split({"class_00", "class_01"}, {"class_02"});
  auto result = stale::train(corpus, split, cfg);

  stale::ParamStore<D> init;
  auto model_cfg = cfg.model;
  model_cfg.input_dim = 12;
  stale::init_model_params(init, cfg.seed, model_cfg);
  for (const auto& [name, m] : init.tensors())
    CHECK(result.checkpoint.params.at(name) == m);
  CHECK(result.history.empty());
  CHECK(result.checkpoint.step == 0);
}

TEST_CASE("training is bit-deterministic given the seed") {
  auto corpus = stale::gen_corpus<D>(corpus_config(3, 2));
  auto cfg = small_train_config(2);
  auto split = full_split({"class_00", "class_01"}, {"class_02"});
  auto a = stale::train(corpus, split, cfg);
  auto b = stale::train(corpus, split, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i)
    CHECK(a.history[i].total == b.history[i].total);  // bitwise at f64
  for (const auto& [name, m] : a.checkpoint.params.tensors())
    CHECK(b.checkpoint.params.at(name) == m);
}

TEST_CASE("single-video training reduces the loss substantially") {
  auto corpus = stale::gen_corpus<D>(corpus_config(2, 1));
  auto cfg = small_train_config(60);
  cfg.batch_size = 1;
  auto split = full_split({"class_00"}, {"class_01"});
  auto result = stale::train(corpus, split, cfg);
  REQUIRE(result.history.size() >= 60);
  const double initial = result.history.front().total;
  const double final = result.history.back().total;
  INFO("initial " << initial << " final " << final);
  CHECK(final < 0.5 * initial);
  for (const auto& row : result.history) CHECK(std::isfinite(row.total));
}

TEST_CASE("frozen text encoder stays bit-identical; prompts still move") {
  auto corpus = stale::gen_corpus<D>(corpus_config(3, 1));
  auto cfg = small_train_config(2);
  cfg.finetune_text = false;
  auto split = full_split({"class_00", "class_01"}, {"class_02"});

  stale::ParamStore<D> init;
  auto model_cfg = cfg.model;
  model_cfg.input_dim = 12;
  stale::init_model_params(init, cfg.seed, model_cfg);

  auto result = stale::train(corpus, split, cfg);
  bool any_text = false;
  for (const auto& name : init.names_with_prefix("txt.")) {
    any_text = true;
    CHECK(result.checkpoint.params.at(name) == init.at(name));
  }
  CHECK(any_text);
  CHECK(result.checkpoint.params.at("prompt.ctx") != init.at("prompt.ctx"));
  CHECK(result.checkpoint.params.at("prompt.bg") != init.at("prompt.bg"));

  // with fine-tuning on, the text encoder moves
  cfg.finetune_text = true;
  auto tuned = stale::train(corpus, split, cfg);
  bool moved = false;
  for (const auto& name : init.names_with_prefix("txt."))
    moved = moved || tuned.checkpoint.params.at(name) != init.at(name);
  CHECK(moved);
}

TEST_CASE("checkpoint round trip reproduces forward outputs bitwise") {
  auto corpus = stale::gen_corpus<D>(corpus_config(3, 1));
  auto cfg = small_train_config(1);
  auto split = full_split({"class_00", "class_01"}, {"class_02"});
  auto result = stale::train(corpus, split, cfg);

  auto dir = std::filesystem::temp_directory_path() / "stale_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.stale";
  stale::save_checkpoint(path, result.checkpoint);
  auto loaded = stale::load_checkpoint<D>(path);

  CHECK(loaded.step == result.checkpoint.step);
  CHECK(loaded.config_hash == result.checkpoint.config_hash);
  for (const auto& [name, m] : result.checkpoint.params.tensors())
    CHECK(loaded.params.at(name) == m);

  // forward through both parameter sets agrees bitwise
  Mat<D> tokens = stale::class_embedding_table(corpus, split.unseen);
  Mat<D> feats = stale::rescale_features(corpus.videos[0].features,
                                         result.checkpoint.model_cfg.snippets);
  auto run = [&](const stale::ParamStore<D>& params) {
    stale::Tape<D> t;
    stale::ParamBinding<D> p(t, params);
    auto g = stale::forward(t, p, result.checkpoint.model_cfg, feats, tokens);
    return stale::extract_output(t, g);
  };
  auto a = run(result.checkpoint.params);
  auto b = run(loaded.params);
  CHECK(a.P == b.P);
  CHECK(a.M == b.M);
  CHECK(a.l_hat == b.l_hat);
}

TEST_CASE("open-set evaluation emits only unseen labels and matches the "
          "configured report shape") {
  auto corpus = stale::gen_corpus<D>(corpus_config(4, 2));
  auto cfg = small_train_config(3);
  auto split = full_split({"class_00", "class_01", "class_02"}, {"class_03"});
  auto result = stale::train(corpus, split, cfg);

  stale::EvalConfig eval_cfg = stale::EvalConfig::activitynet();
  stale::InferenceConfig inf_cfg;
  inf_cfg.theta_c = 0.3;
  auto report = stale::evaluate_checkpoint(result.checkpoint, corpus, split,
                                           eval_cfg, inf_cfg,
                                           EvalMode::kOpenSet);
  CHECK(report.mode == "open-set");
  CHECK(report.thresholds == eval_cfg.report_thresholds);
  CHECK(report.map_per_threshold.size() == eval_cfg.report_thresholds.size());
  for (const auto& [cls, aps] : report.per_class_ap)
    CHECK(cls == "class_03");

  auto closed = stale::evaluate_checkpoint(result.checkpoint, corpus, split,
                                           eval_cfg, inf_cfg,
                                           EvalMode::kClosedSet);
  CHECK(closed.mode == "closed-set");
}

TEST_CASE("training without the consistency loss still converges") {
  auto corpus = stale::gen_corpus<D>(corpus_config(2, 1));
  auto cfg = small_train_config(40);
  cfg.batch_size = 1;
  cfg.toggles.use_consistency = false;
  auto split = full_split({"class_00"}, {"class_01"});
  auto result = stale::train(corpus, split, cfg);
  CHECK(result.history.back().l_const == 0.0);
  CHECK(result.history.back().total < 0.7 * result.history.front().total);
}

TEST_CASE("shuffled-token control really permutes the table") {
  auto corpus = stale::gen_corpus<D>(corpus_config(6, 1));
  auto shuffled = stale::with_shuffled_tokens(corpus, 11);
  CHECK(shuffled.class_token_embeddings != corpus.class_token_embeddings);
  // the rows are a permutation: sums agree
  CHECK(shuffled.class_token_embeddings.sum() ==
        Catch::Approx(corpus.class_token_embeddings.sum()).margin(1e-9));
  // deterministic
  auto again = stale::with_shuffled_tokens(corpus, 11);
  CHECK(again.class_token_embeddings == shuffled.class_token_embeddings);
}

TEST_CASE("training loss history CSV has the documented header") {
  std::vector<stale::LossBreakdown<D>> history(2);
  history[0].l_class = 1.0;
  history[0].total = 1.5;
  auto csv = stale::loss_history_csv(history);
  CHECK(csv.rfind("step,L_c,L_m,L_comp,L_const,total\n", 0) == 0);
  CHECK(csv.find("\n0,1,") != std::string::npos);
}
