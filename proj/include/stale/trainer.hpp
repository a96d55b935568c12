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
#include <set>
#include <string>
#include <vector>

#include "stale/eval.hpp"
#include "stale/inference.hpp"
#include "stale/losses.hpp"
#include "stale/synthdata.hpp"

namespace stale {

struct TrainConfig {
  double lr = 1e-4;
  int epochs = 15;
  int batch_size = 16;
  double grad_clip = 1.0;
  double weight_decay = 0.0;  // decoupled, weight matrices only
  std::uint64_t seed = 0;
  bool finetune_text = true;  // off freezes the text encoder weights
  LossToggles toggles;
  ModelConfig model;

  void validate() const {
    require(lr > 0.0, "train config: lr must be > 0");
    require(epochs >= 0, "train config: epochs must be >= 0");
    require(batch_size >= 1, "train config: batch size must be >= 1");
    model.validate();
  }

  json to_json() const {
    return json{{"lr", lr},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"grad_clip", grad_clip},
                {"weight_decay", weight_decay},
                {"seed", seed},
                {"finetune_text", finetune_text},
                {"loss_class", toggles.use_class},
                {"loss_mask", toggles.use_mask},
                {"loss_comp", toggles.use_comp},
                {"loss_consistency", toggles.use_consistency},
                {"model", model.to_json()}};
  }

  static TrainConfig from_json(const json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.finetune_text = j.value("finetune_text", c.finetune_text);
    c.toggles.use_class = j.value("loss_class", true);
    c.toggles.use_mask = j.value("loss_mask", true);
    c.toggles.use_comp = j.value("loss_comp", true);
    c.toggles.use_consistency = j.value("loss_consistency", true);
    if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
    c.validate();
    return c;
  }

  std::uint64_t hash() const { return fnv1a64(to_json().dump()); }
};

// Adam with bias correction and global-norm gradient clipping. Names in
// the frozen set keep their parameters and moments untouched.
template <class S>
class Adam {
 public:
  explicit Adam(double lr, double clip = 1.0, double weight_decay = 0.0)
      : lr_(lr), clip_(clip), weight_decay_(weight_decay) {}

  void step(ParamStore<S>& params,
            const std::map<std::string, Mat<S>>& grads,
            const std::set<std::string>& frozen = {}) {
    double sq_norm = 0.0;
    for (const auto& [name, g] : grads)
      if (!frozen.count(name)) sq_norm += static_cast<double>(g.squaredNorm());
    const double norm = std::sqrt(sq_norm);
    const double scale =
        clip_ > 0.0 && norm > clip_ ? clip_ / norm : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (const auto& [name, g_raw] : grads) {
      if (frozen.count(name)) continue;
      Mat<S> g = g_raw * static_cast<S>(scale);
      Mat<S>& m = moment(m_, name, g);
      Mat<S>& v = moment(v_, name, g);
      m = static_cast<S>(kBeta1) * m + static_cast<S>(1.0 - kBeta1) * g;
      v = static_cast<S>(kBeta2) * v +
          static_cast<S>(1.0 - kBeta2) * g.cwiseProduct(g);
      Mat<S> m_hat = m / static_cast<S>(bc1);
      Mat<S> v_hat = v / static_cast<S>(bc2);
      Mat<S>& value = params.at(name);
      // decoupled decay on weight matrices only
      if (weight_decay_ > 0.0 && name.size() > 2 &&
          name.compare(name.size() - 2, 2, ".W") == 0)
        value *= static_cast<S>(1.0 - lr_ * weight_decay_);
      value -= (static_cast<S>(lr_) * m_hat.array() /
                (v_hat.array().sqrt() + static_cast<S>(kEps)))
                   .matrix();
    }
  }

  std::int64_t steps() const { return t_; }
  std::map<std::string, Mat<S>>& m() { return m_; }
  std::map<std::string, Mat<S>>& v() { return v_; }
  void restore(std::map<std::string, Mat<S>> m, std::map<std::string, Mat<S>> v,
               std::int64_t t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  Mat<S>& moment(std::map<std::string, Mat<S>>& store,
                 const std::string& name, const Mat<S>& like) {
    auto it = store.find(name);
    if (it == store.end())
      it = store.emplace(name, Mat<S>::Zero(like.rows(), like.cols())).first;
    return it->second;
  }

  double lr_;
  double clip_;
  double weight_decay_ = 0.0;
  std::int64_t t_ = 0;
  std::map<std::string, Mat<S>> m_, v_;
};

template <class S>
struct Checkpoint {
  ParamStore<S> params;
  std::map<std::string, Mat<S>> adam_m, adam_v;
  std::int64_t step = 0;
  std::uint64_t config_hash = 0;
  ModelConfig model_cfg;
};

template <class S>
void save_checkpoint(const std::filesystem::path& path,
                     const Checkpoint<S>& ckpt) {
  NamedTensors<S> nt;
  for (const auto& [name, m] : ckpt.params.tensors()) nt.add("param." + name, m);
  for (const auto& [name, m] : ckpt.adam_m) nt.add("adam_m." + name, m);
  for (const auto& [name, m] : ckpt.adam_v) nt.add("adam_v." + name, m);
  nt.meta["step"] = ckpt.step;
  nt.meta["config_hash"] = ckpt.config_hash;
  nt.meta["model"] = ckpt.model_cfg.to_json();
  write_named_tensors(path, nt);
}

template <class S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path) {
  const NamedTensors<S> nt = read_named_tensors<S>(path);
  Checkpoint<S> ckpt;
  ckpt.step = nt.meta.value("step", 0);
  ckpt.config_hash = nt.meta.value("config_hash", std::uint64_t{0});
  require(nt.meta.contains("model"), "checkpoint missing model config");
  ckpt.model_cfg = ModelConfig::from_json(nt.meta["model"]);
  for (const auto& [name, m] : nt.tensors) {
    if (name.rfind("param.", 0) == 0)
      ckpt.params.add(name.substr(6), m);
    else if (name.rfind("adam_m.", 0) == 0)
      ckpt.adam_m[name.substr(7)] = m;
    else if (name.rfind("adam_v.", 0) == 0)
      ckpt.adam_v[name.substr(7)] = m;
  }
  return ckpt;
}

template <class S>
struct TrainResult {
  Checkpoint<S> checkpoint;
  std::vector<LossBreakdown<S>> history;  // one row per step
};

// History rows as the loss-curve CSV.
template <class S>
std::string loss_history_csv(const std::vector<LossBreakdown<S>>& history) {
  std::string csv = "step,L_c,L_m,L_comp,L_const,total\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", i,
                  static_cast<double>(history[i].l_class),
                  static_cast<double>(history[i].l_mask),
                  static_cast<double>(history[i].l_comp),
                  static_cast<double>(history[i].l_const),
                  static_cast<double>(history[i].total));
    csv += buf;
  }
  return csv;
}

// Optimizes the model on the split's seen classes. The feature frontend
// (generated or loaded snippet features) is data and never updated; the
// text encoder weights freeze when finetune_text is off while the prompt
// contexts and background embedding keep training. Deterministic given
// the seed: single-threaded, fixed batch order.
template <class S>
TrainResult<S> train(const SynthCorpus<S>& corpus, const SplitSpec& split,
                     const TrainConfig& cfg) {
  cfg.validate();
  require(!split.seen.empty(), "train: split has no seen classes");

  ModelConfig model_cfg = cfg.model;
  model_cfg.input_dim = corpus.videos.at(0).features.rows();
  model_cfg.validate();
  const Index T = model_cfg.snippets;

  LabelSpace train_space(split.seen);
  Mat<S> tokens = class_embedding_table(corpus, split.seen);

  struct Sample {
    Mat<S> features;
    DenseLabels<S> labels;
  };
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < corpus.videos.size(); ++i) {
    if (!train_space.contains(corpus.video_class[i])) continue;
    Sample s;
    s.features = rescale_features(corpus.videos[i].features, T);
    s.labels = assign_labels(corpus.videos[i], T, train_space);
    samples.push_back(std::move(s));
  }
  require(!samples.empty(), "train: no videos for the seen classes");

  ParamStore<S> params;
  init_model_params(params, cfg.seed, model_cfg);

  std::set<std::string> frozen;
  if (!cfg.finetune_text)
    for (const auto& name : params.names_with_prefix(kTextEncoderPrefix))
      frozen.insert(name);

  Adam<S> adam(cfg.lr, cfg.grad_clip, cfg.weight_decay);
  TrainResult<S> result;

  LossToggles toggles = cfg.toggles;
  if (!model_cfg.mask_gating) toggles.use_comp = false;

  const auto n = samples.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, fnv1a64("epoch_order")),
                             static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t batch_end =
          std::min(n, at + static_cast<std::size_t>(cfg.batch_size));
      Tape<S> tape;
      ParamBinding<S> binding(tape, params);
      V<S> F_lan = text_embed(tape, binding, model_cfg, tokens);

      V<S> batch_total = tape.constant(Mat<S>::Zero(1, 1));
      LossBreakdown<S> mean_row;
      const auto count = static_cast<S>(batch_end - at);
      for (std::size_t i = at; i < batch_end; ++i) {
        const Sample& s = samples[order[i]];
        auto g = forward_with_text(tape, binding, model_cfg, s.features,
                                   F_lan, GateMode::kHard);
        auto lg = total_loss(tape, binding, model_cfg, g, s.labels,
                             s.features, toggles);
        batch_total = tape.add(batch_total, lg.total);
        const auto row = extract_losses(tape, lg);
        mean_row.l_class += row.l_class / count;
        mean_row.l_mask += row.l_mask / count;
        mean_row.l_comp += row.l_comp / count;
        mean_row.l_const += row.l_const / count;
        mean_row.total += row.total / count;
      }
      V<S> mean_loss = tape.scale(batch_total, S(1) / count);

      if (!std::isfinite(static_cast<double>(mean_row.total)))
        throw NumericError(
            "training diverged at step " +
            std::to_string(result.history.size()) + ": total loss " +
            std::to_string(static_cast<double>(mean_row.total)));

      tape.backward(mean_loss);
      std::map<std::string, Mat<S>> grads;
      for (const auto& [name, node] : binding.bound())
        grads[name] = tape.grad(node);
      adam.step(params, grads, frozen);
      result.history.push_back(mean_row);
    }
  }

  result.checkpoint.params = params;
  result.checkpoint.adam_m = adam.m();
  result.checkpoint.adam_v = adam.v();
  result.checkpoint.step = adam.steps();
  result.checkpoint.config_hash = cfg.hash();
  result.checkpoint.model_cfg = model_cfg;
  return result;
}

enum class EvalMode { kOpenSet, kClosedSet };

// Inference + scoring for every video of the evaluation vocabulary.
// Open-set mode evaluates the unseen classes only, so no seen-class
// label can appear in the detections; closed-set mode reuses the seen
// classes (training equals evaluation vocabulary).
template <class S>
EvalReport evaluate_checkpoint(const Checkpoint<S>& ckpt,
                               const SynthCorpus<S>& corpus,
                               const SplitSpec& split, EvalConfig eval_cfg,
                               const InferenceConfig& inf_cfg,
                               EvalMode mode = EvalMode::kOpenSet) {
  const std::vector<std::string>& vocab =
      mode == EvalMode::kOpenSet ? split.unseen : split.seen;
  require(!vocab.empty(), "evaluate_checkpoint: empty vocabulary");
  for (const auto& c : vocab)
    require(corpus.space.contains(c),
            "evaluate_checkpoint: vocabulary class missing from corpus: " + c);

  const ModelConfig& model_cfg = ckpt.model_cfg;
  const Index T = model_cfg.snippets;
  Mat<S> tokens = class_embedding_table(corpus, vocab);

  LabelSpace vocab_space(vocab);
  std::vector<NamedDetection> all_dets;
  std::vector<GroundTruthSegment> all_gts;

  for (std::size_t i = 0; i < corpus.videos.size(); ++i) {
    if (!vocab_space.contains(corpus.video_class[i])) continue;
    const auto& video = corpus.videos[i];
    for (const auto& inst : video.instances)
      if (vocab_space.contains(inst.label))
        all_gts.push_back({video.id, inst.start, inst.end, inst.label});

    Tape<S> tape;
    ParamBinding<S> binding(tape, ckpt.params);
    Mat<S> features = rescale_features(video.features, T);
    auto g = forward(tape, binding, model_cfg, features, tokens,
                     GateMode::kHard);
    auto out = extract_output(tape, g);
    for (const auto& d : detect(out, inf_cfg))
      all_dets.push_back({video.id,
                          vocab[static_cast<std::size_t>(d.class_index)],
                          d.start, d.end, d.confidence});
  }

  eval_cfg.eval_classes = vocab;
  EvalReport report = map_report(all_dets, all_gts, eval_cfg);
  report.mode = mode == EvalMode::kOpenSet ? "open-set" : "closed-set";
  report.trial = split.trial;
  return report;
}

// Control arm: permutes the class -> token-embedding assignment, which
// severs the semantic link the zero-shot transfer depends on.
template <class S>
SynthCorpus<S> with_shuffled_tokens(const SynthCorpus<S>& corpus,
                                    std::uint64_t seed) {
  SynthCorpus<S> shuffled = corpus;
  const Index K = corpus.class_token_embeddings.rows();
  std::vector<Index> perm(static_cast<std::size_t>(K));
  for (Index i = 0; i < K; ++i) perm[static_cast<std::size_t>(i)] = i;
  // a derangement-ish shuffle: reject fixed-point-heavy permutations
  Rng rng(mix_seed(seed, fnv1a64("token_shuffle")));
  for (int attempt = 0; attempt < 100; ++attempt) {
    rng.shuffle(perm);
    Index fixed = 0;
    for (Index i = 0; i < K; ++i)
      if (perm[static_cast<std::size_t>(i)] == i) ++fixed;
    if (fixed <= K / 10) break;
  }
  for (Index i = 0; i < K; ++i)
    shuffled.class_token_embeddings.row(i) =
        corpus.class_token_embeddings.row(perm[static_cast<std::size_t>(i)]);
  return shuffled;
}

}  // namespace stale
