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
#include <filesystem>
#include <string>
#include <vector>

#include "stale/common.hpp"
#include "stale/datamodel.hpp"
#include "stale/rng.hpp"
#include "stale/tensor_io.hpp"

namespace stale {

// Synthetic corpus generator. Video feature prototypes and class-name
// token embeddings are linear images of one shared latent per class, so
// vision-language alignment learned on a subset of classes carries over
// to the held-out ones. Stands in for pretrained video/text encoders.
struct SynthConfig {
  Index n_classes = 20;
  Index latent_dim = 32;
  Index feature_dim = 32;  // 2d: both streams concatenated
  Index token_dim = 64;    // C'
  Index videos_per_class = 10;
  Index t_raw = 120;
  Index min_instances = 1;
  Index max_instances = 3;
  double min_instance_len = 0.08;  // normalized
  double max_instance_len = 0.30;
  double feature_noise_sigma = 0.10;
  double background_drift_sigma = 0.10;
  bool instance_ramp = false;  // linear amplitude ramp inside instances
  std::uint64_t seed = 0;

  void validate() const {
    require(n_classes >= 1 && latent_dim >= 1 && feature_dim >= 1 &&
                token_dim >= 1 && videos_per_class >= 1 && t_raw >= 1,
            "synth config: all dims must be >= 1");
    require(min_instances >= 1 && max_instances >= min_instances,
            "synth config: bad instance count range");
    require(0.0 < min_instance_len &&
                min_instance_len <= max_instance_len &&
                max_instance_len <= 1.0,
            "synth config: instance length bounds in (0,1]");
    require(feature_noise_sigma >= 0.0 && background_drift_sigma >= 0.0,
            "synth config: sigmas must be >= 0");
  }

  json to_json() const {
    return json{{"n_classes", n_classes},
                {"latent_dim", latent_dim},
                {"feature_dim", feature_dim},
                {"token_dim", token_dim},
                {"videos_per_class", videos_per_class},
                {"t_raw", t_raw},
                {"min_instances", min_instances},
                {"max_instances", max_instances},
                {"min_instance_len", min_instance_len},
                {"max_instance_len", max_instance_len},
                {"feature_noise_sigma", feature_noise_sigma},
                {"background_drift_sigma", background_drift_sigma},
                {"instance_ramp", instance_ramp},
                {"seed", seed}};
  }

  static SynthConfig from_json(const json& j) {
    SynthConfig c;
    c.n_classes = j.value("n_classes", c.n_classes);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.token_dim = j.value("token_dim", c.token_dim);
    c.videos_per_class = j.value("videos_per_class", c.videos_per_class);
    c.t_raw = j.value("t_raw", c.t_raw);
    c.min_instances = j.value("min_instances", c.min_instances);
    c.max_instances = j.value("max_instances", c.max_instances);
    c.min_instance_len = j.value("min_instance_len", c.min_instance_len);
    c.max_instance_len = j.value("max_instance_len", c.max_instance_len);
    c.feature_noise_sigma =
        j.value("feature_noise_sigma", c.feature_noise_sigma);
    c.background_drift_sigma =
        j.value("background_drift_sigma", c.background_drift_sigma);
    c.instance_ramp = j.value("instance_ramp", c.instance_ramp);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

template <class S>
struct SynthCorpus {
  std::vector<AnnotatedVideo<S>> videos;
  std::vector<std::string> video_class;  // parallel to videos
  LabelSpace space;                      // all K generated classes
  Mat<S> class_token_embeddings;         // (K, C')
  // diagnostics: the generating latents and linear maps
  Mat<S> generator_latents;  // (K, latent_dim)
  Mat<S> gen_map_video;      // (feature_dim, latent_dim)
  Mat<S> gen_map_token;      // (token_dim, latent_dim)
  SynthConfig config;

  Index class_of(std::size_t video_index) const {
    return space.index_of(video_class[video_index]);
  }
};

namespace detail {

inline std::vector<ActionInstance> place_instances(Rng& rng,
                                                   const SynthConfig& cfg,
                                                   const std::string& label) {
  const Index n = cfg.min_instances +
                  static_cast<Index>(rng.next_below(static_cast<std::uint64_t>(
                      cfg.max_instances - cfg.min_instances + 1)));
  std::vector<ActionInstance> placed;
  for (Index j = 0; j < n; ++j) {
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      const double len =
          rng.uniform(cfg.min_instance_len, cfg.max_instance_len);
      const double start = rng.uniform(0.0, 1.0 - len);
      const double end = start + len;
      ok = true;
      for (const auto& other : placed)
        if (start < other.end && other.start < end) {
          ok = false;
          break;
        }
      if (ok) placed.push_back({start, end, label});
    }
    if (!ok)
      throw DataError(
          "instance placement failed; video too short for requested "
          "instances");
  }
  std::sort(placed.begin(), placed.end(),
            [](const auto& a, const auto& b) { return a.start < b.start; });
  return placed;
}

}  // namespace detail

template <class S>
SynthCorpus<S> gen_corpus(const SynthConfig& cfg) {
  cfg.validate();
  const Index K = cfg.n_classes, L = cfg.latent_dim;
  const double inv_sqrt_l = 1.0 / std::sqrt(static_cast<double>(L));

  SynthCorpus<S> corpus;
  corpus.config = cfg;
  {
    std::vector<std::string> names;
    for (Index k = 0; k < K; ++k) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "class_%02d", static_cast<int>(k));
      names.emplace_back(buf);
    }
    corpus.space = LabelSpace(names);
  }

  Rng map_rng(mix_seed(cfg.seed, fnv1a64("gen_maps")));
  corpus.gen_map_video =
      map_rng.template normal_mat<S>(cfg.feature_dim, L, inv_sqrt_l);
  corpus.gen_map_token =
      map_rng.template normal_mat<S>(cfg.token_dim, L, inv_sqrt_l);

  Rng latent_rng(mix_seed(cfg.seed, fnv1a64("latents")));
  corpus.generator_latents = latent_rng.template normal_mat<S>(K, L);

  Rng bg_rng(mix_seed(cfg.seed, fnv1a64("background")));
  const Vec<S> background =
      bg_rng.template normal_mat<S>(cfg.feature_dim, 1);

  corpus.class_token_embeddings =
      (corpus.gen_map_token * corpus.generator_latents.transpose())
          .transpose();

  std::uint64_t video_index = 0;
  for (Index k = 0; k < K; ++k) {
    const Vec<S> prototype =
        corpus.gen_map_video * corpus.generator_latents.row(k).transpose();
    for (Index i = 0; i < cfg.videos_per_class; ++i, ++video_index) {
      Rng rng(mix_seed(cfg.seed, mix_seed(fnv1a64("video"), video_index)));
      AnnotatedVideo<S> video;
      {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "v_c%02d_%03d", static_cast<int>(k),
                      static_cast<int>(i));
        video.id = buf;
      }
      video.instances =
          detail::place_instances(rng, cfg, corpus.space.name(k));
      video.features.resize(cfg.feature_dim, cfg.t_raw);
      for (Index t = 0; t < cfg.t_raw; ++t) {
        const double c = snippet_center(t, cfg.t_raw);
        const ActionInstance* inside = nullptr;
        for (const auto& inst : video.instances)
          if (inst.start <= c && c < inst.end) {
            inside = &inst;
            break;
          }
        Vec<S> col;
        if (inside != nullptr) {
          S amp = S(1);
          if (cfg.instance_ramp) {
            const double pos =
                (c - inside->start) / (inside->end - inside->start);
            amp = static_cast<S>(0.75 + 0.5 * pos);
          }
          col = prototype * amp;
        } else {
          col = background;
        }
        const double sigma = inside != nullptr ? cfg.feature_noise_sigma
                                               : cfg.background_drift_sigma;
        for (Index r = 0; r < cfg.feature_dim; ++r)
          col(r) += static_cast<S>(sigma * rng.normal());
        video.features.col(t) = col;
      }
      corpus.video_class.push_back(corpus.space.name(k));
      corpus.videos.push_back(std::move(video));
    }
  }
  return corpus;
}

// Rows are the token embeddings of `subset`, in subset order.
template <class S>
Mat<S> class_embedding_table(const SynthCorpus<S>& corpus,
                             const std::vector<std::string>& subset) {
  Mat<S> out(static_cast<Index>(subset.size()),
             corpus.class_token_embeddings.cols());
  for (std::size_t i = 0; i < subset.size(); ++i)
    out.row(static_cast<Index>(i)) =
        corpus.class_token_embeddings.row(corpus.space.index_of(subset[i]));
  return out;
}

// ---- corpus on disk ----
//
// dir/corpus.json       manifest (classes, dims, token table, video list)
// dir/annotations.json  ActivityNet-style ground truth, seconds
// dir/features/<id>.bin little-endian f32 blob + JSON sidecar

template <class S>
void save_corpus(const std::filesystem::path& dir,
                 const SynthCorpus<S>& corpus) {
  std::filesystem::create_directories(dir / "features");

  json manifest;
  manifest["classes"] = corpus.space.classes();
  manifest["config"] = corpus.config.to_json();
  json tokens = json::array();
  for (Index k = 0; k < corpus.class_token_embeddings.rows(); ++k) {
    json row = json::array();
    for (Index j = 0; j < corpus.class_token_embeddings.cols(); ++j)
      row.push_back(corpus.class_token_embeddings(k, j));
    tokens.push_back(row);
  }
  manifest["token_embeddings"] = tokens;
  json latents = json::array();
  for (Index k = 0; k < corpus.generator_latents.rows(); ++k) {
    json row = json::array();
    for (Index j = 0; j < corpus.generator_latents.cols(); ++j)
      row.push_back(corpus.generator_latents(k, j));
    latents.push_back(row);
  }
  manifest["generator_latents"] = latents;

  std::vector<VideoAnnotation> annotations;
  json videos = json::array();
  const double duration = static_cast<double>(corpus.config.t_raw);
  for (std::size_t i = 0; i < corpus.videos.size(); ++i) {
    const auto& v = corpus.videos[i];
    const std::string feature_file = "features/" + v.id + ".bin";
    json streams;
    streams["rgb"] = {0, v.features.rows() / 2};
    streams["flow"] = {v.features.rows() / 2, v.features.rows()};
    write_feature_blob(dir / feature_file, v.features, streams);
    videos.push_back({{"id", v.id},
                      {"class", corpus.video_class[i]},
                      {"features", feature_file}});
    annotations.push_back({v.id, duration, v.instances});
  }
  manifest["videos"] = videos;

  write_json_file(dir / "corpus.json", manifest);
  write_json_file(dir / "annotations.json",
                  annotations_to_json(annotations));
}

template <class S>
SynthCorpus<S> load_corpus(const std::filesystem::path& dir) {
  const json manifest = read_json_file(dir / "corpus.json");
  SynthCorpus<S> corpus;
  corpus.config = SynthConfig::from_json(manifest.at("config"));
  corpus.space =
      LabelSpace(manifest.at("classes").get<std::vector<std::string>>());

  const auto& tokens = manifest.at("token_embeddings");
  corpus.class_token_embeddings.resize(
      static_cast<Index>(tokens.size()),
      static_cast<Index>(tokens.empty() ? 0 : tokens[0].size()));
  for (Index k = 0; k < corpus.class_token_embeddings.rows(); ++k)
    for (Index j = 0; j < corpus.class_token_embeddings.cols(); ++j)
      corpus.class_token_embeddings(k, j) =
          tokens[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]
              .get<S>();

  if (manifest.contains("generator_latents")) {
    const auto& lat = manifest["generator_latents"];
    corpus.generator_latents.resize(
        static_cast<Index>(lat.size()),
        static_cast<Index>(lat.empty() ? 0 : lat[0].size()));
    for (Index k = 0; k < corpus.generator_latents.rows(); ++k)
      for (Index j = 0; j < corpus.generator_latents.cols(); ++j)
        corpus.generator_latents(k, j) =
            lat[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]
                .get<S>();
  }

  std::map<std::string, std::vector<ActionInstance>> by_id;
  for (auto& ann :
       annotations_from_json(read_json_file(dir / "annotations.json")))
    by_id[ann.id] = std::move(ann.instances);

  for (const auto& v : manifest.at("videos")) {
    AnnotatedVideo<S> video;
    video.id = v.at("id").get<std::string>();
    video.features = read_feature_blob<S>(
        dir / v.at("features").get<std::string>());
    auto it = by_id.find(video.id);
    require(it != by_id.end(), "no annotations for video " + video.id);
    video.instances = it->second;
    video.validate();
    corpus.video_class.push_back(v.at("class").get<std::string>());
    require(corpus.space.contains(corpus.video_class.back()),
            "video class not in corpus label space");
    corpus.videos.push_back(std::move(video));
  }
  return corpus;
}

}  // namespace stale
