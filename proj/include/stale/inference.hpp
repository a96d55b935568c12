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
#include <vector>

#include "stale/detection.hpp"
#include "stale/model.hpp"

namespace stale {

enum class NmsMode { kGaussian, kLinear };

struct InferenceConfig {
  double theta_c = 0.5;  // class-probability gate
  std::vector<double> mask_thresholds =  // the threshold set
      {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int top_n_snippets = 100;
  NmsMode nms_mode = NmsMode::kGaussian;
  double nms_sigma = 0.5;           // gaussian decay scale
  double nms_linear_iou = 0.5;      // linear mode: decay above this tIoU
  double score_floor = 1e-4;
  int max_detections = 100;

  void validate() const {
    require(!mask_thresholds.empty(), "inference: threshold set is empty");
    for (double th : mask_thresholds)
      require(0.0 < th && th < 1.0, "inference: thresholds must be in (0,1)");
    require(0.0 < theta_c && theta_c < 1.0,
            "inference: theta_c must be in (0,1)");
    require(top_n_snippets >= 1 && max_detections >= 1,
            "inference: counts must be >= 1");
    require(nms_sigma > 0.0, "inference: sigma must be > 0");
  }

  json to_json() const {
    return json{{"theta_c", theta_c},
                {"mask_thresholds", mask_thresholds},
                {"top_n_snippets", top_n_snippets},
                {"nms_mode", nms_mode == NmsMode::kGaussian ? "gaussian"
                                                            : "linear"},
                {"nms_sigma", nms_sigma},
                {"nms_linear_iou", nms_linear_iou},
                {"score_floor", score_floor},
                {"max_detections", max_detections}};
  }

  static InferenceConfig from_json(const json& j) {
    InferenceConfig c;
    c.theta_c = j.value("theta_c", c.theta_c);
    if (j.contains("mask_thresholds"))
      c.mask_thresholds = j["mask_thresholds"].get<std::vector<double>>();
    c.top_n_snippets = j.value("top_n_snippets", c.top_n_snippets);
    if (j.value("nms_mode", "gaussian") == std::string("linear"))
      c.nms_mode = NmsMode::kLinear;
    c.nms_sigma = j.value("nms_sigma", c.nms_sigma);
    c.nms_linear_iou = j.value("nms_linear_iou", c.nms_linear_iou);
    c.score_floor = j.value("score_floor", c.score_floor);
    c.max_detections = j.value("max_detections", c.max_detections);
    c.validate();
    return c;
  }
};

namespace detail {

struct Run {
  Index first = 0;
  Index last = 0;  // inclusive
};

// Maximal runs of rows where column >= threshold.
template <class S>
std::vector<Run> threshold_runs(const Vec<S>& column, double threshold) {
  std::vector<Run> runs;
  const Index T = column.size();
  Index t = 0;
  while (t < T) {
    if (column(t) >= static_cast<S>(threshold)) {
      Run r{t, t};
      while (r.last + 1 < T &&
             column(r.last + 1) >= static_cast<S>(threshold))
        ++r.last;
      runs.push_back(r);
      t = r.last + 1;
    } else {
      ++t;
    }
  }
  return runs;
}

// The run containing the anchor, else the nearest one (ties to the
// earlier run).
inline const Run* anchored_run(const std::vector<Run>& runs, Index anchor) {
  const Run* best = nullptr;
  Index best_dist = 0;
  for (const auto& r : runs) {
    if (r.first <= anchor && anchor <= r.last) return &r;
    const Index dist =
        anchor < r.first ? r.first - anchor : anchor - r.last;
    if (best == nullptr || dist < best_dist) {
      best = &r;
      best_dist = dist;
    }
  }
  return best;
}

}  // namespace detail

// Candidate generation: snippets confident in some foreground class gate
// the columns of M at every threshold in the set; the run anchored at
// the snippet becomes a candidate scored by classification x max-mask.
template <class S>
std::vector<Detection> generate_candidates(const ModelOutput<S>& out,
                                           const InferenceConfig& cfg) {
  cfg.validate();
  const Index K = out.P.rows() - 1;
  const Index T = out.P.cols();
  require(out.M.rows() == T && out.M.cols() == T,
          "generate_candidates: M must be (T,T)");

  struct Anchor {
    Index t;
    Index cls;
    double prob;
  };
  std::vector<Anchor> anchors;
  for (Index t = 0; t < T; ++t) {
    Index best_k = -1;
    double best_p = 0.0;
    for (Index k = 0; k < K; ++k)
      if (out.P(k, t) > best_p) {
        best_p = out.P(k, t);
        best_k = k;
      }
    if (best_k >= 0 && best_p > cfg.theta_c)
      anchors.push_back({t, best_k, best_p});
  }
  std::stable_sort(anchors.begin(), anchors.end(),
                   [](const Anchor& a, const Anchor& b) {
                     return a.prob > b.prob;
                   });
  if (static_cast<int>(anchors.size()) > cfg.top_n_snippets)
    anchors.resize(static_cast<std::size_t>(cfg.top_n_snippets));

  std::vector<Detection> candidates;
  for (const auto& a : anchors) {
    const Vec<S> column = out.M.col(a.t);
    for (double threshold : cfg.mask_thresholds) {
      const auto runs = detail::threshold_runs(column, threshold);
      const auto* run = detail::anchored_run(runs, a.t);
      if (run == nullptr) continue;
      double peak = 0.0;
      for (Index r = run->first; r <= run->last; ++r)
        peak = std::max(peak, static_cast<double>(column(r)));
      Detection d;
      d.start = static_cast<double>(run->first) / static_cast<double>(T);
      d.end = static_cast<double>(run->last + 1) / static_cast<double>(T);
      d.class_index = a.cls;
      d.confidence = a.prob * peak;
      d.source_snippet = a.t;
      candidates.push_back(d);
    }
  }
  return candidates;
}

// Classwise SoftNMS: repeatedly promote the highest-confidence detection
// and decay the overlapping remainder of its class; gaussian mode decays
// by exp(-tIoU^2/sigma), linear mode by (1-tIoU) past the overlap gate.
// Output is confidence-sorted, floored, and truncated.
inline std::vector<Detection> soft_nms(std::vector<Detection> dets,
                                       const InferenceConfig& cfg) {
  cfg.validate();
  std::vector<Detection> kept;
  kept.reserve(dets.size());

  std::vector<Index> classes;
  for (const auto& d : dets)
    if (std::find(classes.begin(), classes.end(), d.class_index) ==
        classes.end())
      classes.push_back(d.class_index);
  std::sort(classes.begin(), classes.end());

  for (Index cls : classes) {
    std::vector<Detection> pool;
    for (const auto& d : dets)
      if (d.class_index == cls) pool.push_back(d);
    while (!pool.empty()) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < pool.size(); ++i)
        if (pool[i].confidence > pool[best].confidence) best = i;
      Detection top = pool[best];
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
      kept.push_back(top);
      for (auto& e : pool) {
        const double overlap = tiou(top, e);
        if (cfg.nms_mode == NmsMode::kGaussian) {
          e.confidence *=
              std::exp(-(overlap * overlap) / cfg.nms_sigma);
        } else if (overlap > cfg.nms_linear_iou) {
          e.confidence *= (1.0 - overlap);
        }
      }
    }
  }

  kept.erase(std::remove_if(kept.begin(), kept.end(),
                            [&](const Detection& d) {
                              return d.confidence < cfg.score_floor;
                            }),
             kept.end());
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Detection& a, const Detection& b) {
                     if (a.confidence != b.confidence)
                       return a.confidence > b.confidence;
                     if (a.class_index != b.class_index)
                       return a.class_index < b.class_index;
                     return a.start < b.start;
                   });
  if (static_cast<int>(kept.size()) > cfg.max_detections)
    kept.resize(static_cast<std::size_t>(cfg.max_detections));
  return kept;
}

// Candidate generation followed by suppression: the per-video inference
// path.
template <class S>
std::vector<Detection> detect(const ModelOutput<S>& out,
                              const InferenceConfig& cfg) {
  return soft_nms(generate_candidates(out, cfg), cfg);
}

}  // namespace stale
