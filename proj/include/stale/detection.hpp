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
#include <map>
#include <string>
#include <vector>

#include "stale/common.hpp"
#include "stale/tensor_io.hpp"

namespace stale {

// A scored candidate action segment in normalized time.
struct Detection {
  double start = 0.0;
  double end = 0.0;
  Index class_index = 0;
  double confidence = 0.0;
  Index source_snippet = -1;
};

// Temporal intersection-over-union; zero-length or disjoint segments
// score 0.
inline double tiou(double a_start, double a_end, double b_start,
                   double b_end) {
  const double inter =
      std::max(0.0, std::min(a_end, b_end) - std::max(a_start, b_start));
  const double uni = (a_end - a_start) + (b_end - b_start) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double tiou(const Detection& a, const Detection& b) {
  return tiou(a.start, a.end, b.start, b.end);
}

// ActivityNet-results-style serialization:
// {"results": {video_id: [{"segment": [s,e], "label": ..., "score": ...}]}}
inline json detections_to_json(
    const std::map<std::string, std::vector<Detection>>& per_video,
    const std::vector<std::string>& class_names) {
  json results = json::object();
  for (const auto& [video_id, dets] : per_video) {
    json arr = json::array();
    for (const auto& d : dets) {
      require(d.class_index >= 0 &&
                  d.class_index < static_cast<Index>(class_names.size()),
              "detection class index out of range");
      arr.push_back(
          {{"segment", {d.start, d.end}},
           {"label", class_names[static_cast<std::size_t>(d.class_index)]},
           {"score", d.confidence}});
    }
    results[video_id] = arr;
  }
  return json{{"version", kVersion}, {"results", results}};
}

struct NamedDetection {
  std::string video_id;
  std::string label;
  double start = 0.0;
  double end = 0.0;
  double score = 0.0;
};

inline std::vector<NamedDetection> detections_from_json(const json& j) {
  require(j.contains("results"), "detections JSON missing 'results'");
  std::vector<NamedDetection> out;
  for (const auto& [video_id, arr] : j.at("results").items())
    for (const auto& d : arr) {
      NamedDetection nd;
      nd.video_id = video_id;
      nd.label = d.at("label").get<std::string>();
      nd.start = d.at("segment")[0].get<double>();
      nd.end = d.at("segment")[1].get<double>();
      nd.score = d.at("score").get<double>();
      out.push_back(std::move(nd));
    }
  return out;
}

}  // namespace stale
