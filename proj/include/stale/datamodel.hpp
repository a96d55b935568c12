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
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "stale/common.hpp"
#include "stale/rng.hpp"
#include "stale/tensor_io.hpp"

namespace stale {

// One ground-truth action segment in normalized video time.
struct ActionInstance {
  double start = 0.0;  // in [0,1)
  double end = 0.0;    // in (start,1]
  std::string label;

  void validate() const {
    require(0.0 <= start && start < end && end <= 1.0,
            "instance must satisfy 0 <= start < end <= 1");
  }
};

template <class S>
struct AnnotatedVideo {
  std::string id;
  Mat<S> features;  // (C_in, T_raw)
  std::vector<ActionInstance> instances;

  void validate() const {
    require(features.rows() >= 1 && features.cols() >= 1,
            "video " + id + ": empty feature matrix");
    require(all_finite(features), "video " + id + ": non-finite features");
    for (const auto& inst : instances) inst.validate();
  }
};

// Ordered foreground classes; the background class sits at index K.
class LabelSpace {
 public:
  LabelSpace() = default;
  explicit LabelSpace(std::vector<std::string> classes)
      : classes_(std::move(classes)) {
    require(!classes_.empty(), "label space needs at least one class");
    for (std::size_t i = 0; i < classes_.size(); ++i)
      require(index_.emplace(classes_[i], static_cast<Index>(i)).second,
              "duplicate class: " + classes_[i]);
  }

  Index size() const { return static_cast<Index>(classes_.size()); }
  Index background_index() const { return size(); }
  const std::vector<std::string>& classes() const { return classes_; }
  const std::string& name(Index k) const {
    return classes_[static_cast<std::size_t>(k)];
  }
  bool contains(const std::string& label) const {
    return index_.count(label) > 0;
  }
  Index index_of(const std::string& label) const {
    auto it = index_.find(label);
    require(it != index_.end(), "unknown label: " + label);
    return it->second;
  }

 private:
  std::vector<std::string> classes_;
  std::map<std::string, Index> index_;
};

// One seen/unseen class partition for a zero-shot trial.
struct SplitSpec {
  std::vector<std::string> seen;
  std::vector<std::string> unseen;
  int trial = 0;
  std::uint64_t trial_seed = 0;

  json to_json() const {
    return json{{"trial", trial},
                {"seed", trial_seed},
                {"seen", seen},
                {"unseen", unseen}};
  }
  static SplitSpec from_json(const json& j) {
    SplitSpec s;
    s.trial = j.at("trial").get<int>();
    s.trial_seed = j.at("seed").get<std::uint64_t>();
    s.seen = j.at("seen").get<std::vector<std::string>>();
    s.unseen = j.at("unseen").get<std::vector<std::string>>();
    return s;
  }
};

// Dense per-snippet training targets.
//   y:  (K+1, T) one-hot class matrix, background at row K
//   G:  (T, T) column t is the covering instance's full-video mask
//   fg: (1, T) union of all instance supports
template <class S>
struct DenseLabels {
  Mat<S> y;
  Mat<S> G;
  Mat<S> fg;
};

inline double snippet_center(Index t, Index T) {
  return (static_cast<double>(t) + 0.5) / static_cast<double>(T);
}

// Converts interval annotations into dense snippet targets. A snippet
// belongs to an instance iff its center lies in [start, end); overlaps
// resolve to the shorter instance, ties to the earlier start.
template <class S>
DenseLabels<S> assign_labels(const AnnotatedVideo<S>& video, Index T,
                             const LabelSpace& space) {
  require(T >= 1, "assign_labels: T >= 1");
  for (const auto& inst : video.instances) {
    inst.validate();
    require(space.contains(inst.label),
            "label not in label space: " + inst.label);
  }

  const Index K = space.size();
  DenseLabels<S> out;
  out.y = Mat<S>::Zero(K + 1, T);
  out.G = Mat<S>::Zero(T, T);
  out.fg = Mat<S>::Zero(1, T);

  // precompute each instance's support over snippet centers
  const Index n = static_cast<Index>(video.instances.size());
  Mat<S> support = Mat<S>::Zero(T, n);
  for (Index j = 0; j < n; ++j) {
    const auto& inst = video.instances[static_cast<std::size_t>(j)];
    for (Index t = 0; t < T; ++t) {
      const double c = snippet_center(t, T);
      if (inst.start <= c && c < inst.end) support(t, j) = S(1);
    }
  }

  for (Index t = 0; t < T; ++t) {
    Index owner = -1;
    double owner_len = 0.0, owner_start = 0.0;
    for (Index j = 0; j < n; ++j) {
      if (support(t, j) == S(0)) continue;
      out.fg(0, t) = S(1);
      const auto& inst = video.instances[static_cast<std::size_t>(j)];
      const double len = inst.end - inst.start;
      const bool wins = owner < 0 || len < owner_len ||
                        (len == owner_len && inst.start < owner_start);
      if (wins) {
        owner = j;
        owner_len = len;
        owner_start = inst.start;
      }
    }
    if (owner >= 0) {
      const auto& inst = video.instances[static_cast<std::size_t>(owner)];
      out.y(space.index_of(inst.label), t) = S(1);
      out.G.col(t) = support.col(owner);
    } else {
      out.y(K, t) = S(1);
    }
  }
  return out;
}

// Seeded uniform seen/unseen partitions, one per trial. |seen| =
// round(seen_fraction * K); degenerate sizes are rejected.
inline std::vector<SplitSpec> make_splits(const LabelSpace& space,
                                          double seen_fraction, int n_trials,
                                          std::uint64_t seed) {
  require(0.0 < seen_fraction && seen_fraction < 1.0,
          "seen_fraction must be in (0,1)");
  require(n_trials >= 1, "n_trials must be >= 1");
  const Index K = space.size();
  const auto n_seen = static_cast<Index>(
      std::lround(seen_fraction * static_cast<double>(K)));
  require(n_seen > 0 && n_seen < K,
          "degenerate split: round(seen_fraction*K) must be in (0,K)");

  std::vector<SplitSpec> out;
  out.reserve(static_cast<std::size_t>(n_trials));
  for (int trial = 0; trial < n_trials; ++trial) {
    const std::uint64_t trial_seed =
        mix_seed(seed, static_cast<std::uint64_t>(trial));
    Rng rng(trial_seed);
    std::vector<Index> order(static_cast<std::size_t>(K));
    for (Index i = 0; i < K; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);

    std::vector<Index> seen_idx(order.begin(), order.begin() + n_seen);
    std::vector<Index> unseen_idx(order.begin() + n_seen, order.end());
    std::sort(seen_idx.begin(), seen_idx.end());
    std::sort(unseen_idx.begin(), unseen_idx.end());

    SplitSpec s;
    s.trial = trial;
    s.trial_seed = trial_seed;
    for (Index i : seen_idx) s.seen.push_back(space.name(i));
    for (Index i : unseen_idx) s.unseen.push_back(space.name(i));
    out.push_back(std::move(s));
  }
  return out;
}

// Channelwise endpoint-aligned linear interpolation onto T samples.
template <class S>
Mat<S> rescale_features(const Mat<S>& features, Index T) {
  require(features.cols() >= 1 && T >= 1, "rescale: sizes must be >= 1");
  require(all_finite(features), "rescale: non-finite input");
  const Index t_raw = features.cols();
  if (t_raw == T) return features;

  Mat<S> out(features.rows(), T);
  for (Index i = 0; i < T; ++i) {
    // T == 1 has no endpoint-aligned grid; take the first sample.
    const double x =
        T == 1 ? 0.0
               : static_cast<double>(i) * static_cast<double>(t_raw - 1) /
                     static_cast<double>(T - 1);
    const Index lo = std::min<Index>(static_cast<Index>(x), t_raw - 1);
    const Index hi = std::min<Index>(lo + 1, t_raw - 1);
    const double w = x - static_cast<double>(lo);
    out.col(i) = features.col(lo) * static_cast<S>(1.0 - w) +
                 features.col(hi) * static_cast<S>(w);
  }
  return out;
}

// ---- annotation JSON ----
//
// ActivityNet-style: {"database": {id: {"duration": sec, "annotations":
// [{"segment": [s,e], "label": name}]}}}, segment times in seconds,
// normalized by duration on load.

struct VideoAnnotation {
  std::string id;
  double duration = 0.0;  // seconds
  std::vector<ActionInstance> instances;
};

inline json annotations_to_json(const std::vector<VideoAnnotation>& videos) {
  json db = json::object();
  for (const auto& v : videos) {
    json anns = json::array();
    for (const auto& inst : v.instances)
      anns.push_back({{"segment", {inst.start * v.duration,
                                   inst.end * v.duration}},
                      {"label", inst.label}});
    db[v.id] = {{"duration", v.duration}, {"annotations", anns}};
  }
  return json{{"version", kVersion}, {"database", db}};
}

inline std::vector<VideoAnnotation> annotations_from_json(const json& j) {
  require(j.contains("database"), "annotation JSON missing 'database'");
  std::vector<VideoAnnotation> out;
  for (const auto& [id, entry] : j.at("database").items()) {
    VideoAnnotation v;
    v.id = id;
    v.duration = entry.at("duration").get<double>();
    require(v.duration > 0.0, "video " + id + ": duration must be > 0");
    for (const auto& ann : entry.value("annotations", json::array())) {
      ActionInstance inst;
      const auto& seg = ann.at("segment");
      require(seg.size() == 2, "video " + id + ": segment must be [s,e]");
      inst.start = std::clamp(seg[0].get<double>() / v.duration, 0.0, 1.0);
      inst.end = std::clamp(seg[1].get<double>() / v.duration, 0.0, 1.0);
      inst.label = ann.at("label").get<std::string>();
      inst.validate();
      v.instances.push_back(inst);
    }
    out.push_back(std::move(v));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

}  // namespace stale
