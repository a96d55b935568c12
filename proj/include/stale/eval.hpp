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
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "stale/datamodel.hpp"
#include "stale/detection.hpp"

namespace stale {

struct GroundTruthSegment {
  std::string video_id;
  double start = 0.0;
  double end = 0.0;
  std::string label;
};

struct EvalConfig {
  std::vector<double> report_thresholds;  // table columns
  std::vector<double> average_grid;       // averaged into avg mAP
  std::vector<std::string> eval_classes;

  // ActivityNet convention: report 0.5/0.75/0.95, average over the
  // ten-point 0.5:0.05:0.95 grid.
  static EvalConfig activitynet() {
    EvalConfig c;
    c.report_thresholds = {0.5, 0.75, 0.95};
    for (int i = 0; i < 10; ++i)
      c.average_grid.push_back(0.5 + 0.05 * static_cast<double>(i));
    return c;
  }

  // THUMOS convention: the same five thresholds report and average.
  static EvalConfig thumos() {
    EvalConfig c;
    c.report_thresholds = {0.3, 0.4, 0.5, 0.6, 0.7};
    c.average_grid = c.report_thresholds;
    return c;
  }

  void validate() const {
    auto check = [](const std::vector<double>& v, const char* which) {
      require(!v.empty(), std::string("eval config: empty ") + which);
      for (std::size_t i = 0; i < v.size(); ++i) {
        require(v[i] > 0.0 && v[i] <= 1.0,
                std::string("eval config: ") + which + " must be in (0,1]");
        if (i > 0)
          require(v[i] > v[i - 1], std::string("eval config: ") + which +
                                       " must be strictly increasing");
      }
    };
    check(report_thresholds, "report thresholds");
    check(average_grid, "average grid");
  }

  json to_json() const {
    return json{{"report_thresholds", report_thresholds},
                {"average_grid", average_grid},
                {"eval_classes", eval_classes}};
  }

  static EvalConfig from_json(const json& j) {
    EvalConfig c = activitynet();
    if (j.contains("report_thresholds"))
      c.report_thresholds =
          j["report_thresholds"].get<std::vector<double>>();
    if (j.contains("average_grid"))
      c.average_grid = j["average_grid"].get<std::vector<double>>();
    if (j.contains("eval_classes"))
      c.eval_classes = j["eval_classes"].get<std::vector<std::string>>();
    c.validate();
    return c;
  }
};

struct EvalReport {
  std::vector<double> thresholds;         // report columns
  std::vector<double> map_per_threshold;  // mAP at each column
  double avg_map = 0.0;                   // mean mAP over the average grid
  std::map<std::string, std::vector<double>> per_class_ap;
  std::string mode = "open-set";
  int trial = 0;

  json to_json() const {
    json j{{"mode", mode},
           {"trial", trial},
           {"thresholds", thresholds},
           {"map_per_threshold", map_per_threshold},
           {"avg_map", avg_map}};
    json pc = json::object();
    for (const auto& [cls, aps] : per_class_ap) pc[cls] = aps;
    j["per_class_ap"] = pc;
    return j;
  }

  static EvalReport from_json(const json& j) {
    EvalReport r;
    r.mode = j.value("mode", "open-set");
    r.trial = j.value("trial", 0);
    r.thresholds = j.at("thresholds").get<std::vector<double>>();
    r.map_per_threshold =
        j.at("map_per_threshold").get<std::vector<double>>();
    r.avg_map = j.at("avg_map").get<double>();
    if (j.contains("per_class_ap"))
      for (const auto& [cls, aps] : j["per_class_ap"].items())
        r.per_class_ap[cls] = aps.get<std::vector<double>>();
    return r;
  }

  std::string to_csv() const {
    std::string csv = "metric";
    for (double t : thresholds) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), ",tIoU_%.2f", t);
      csv += buf;
    }
    csv += ",avg\nmAP";
    for (double v : map_per_threshold) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), ",%.6f", v);
      csv += buf;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), ",%.6f\n", avg_map);
    csv += buf;
    return csv;
  }
};

// Interpolated average precision for one class at one tIoU threshold.
// Greedy confidence-order matching, one ground truth per detection,
// best-tIoU selection with ties to the earlier ground-truth start;
// all-point interpolation (precision envelope integral).
inline double average_precision(std::vector<NamedDetection> dets,
                                const std::vector<GroundTruthSegment>& gts,
                                double threshold) {
  if (gts.empty()) return 0.0;
  if (dets.empty()) return 0.0;

  std::stable_sort(dets.begin(), dets.end(),
                   [](const NamedDetection& a, const NamedDetection& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.video_id != b.video_id)
                       return a.video_id < b.video_id;
                     return a.start < b.start;
                   });

  std::map<std::string, std::vector<std::size_t>> gt_by_video;
  for (std::size_t i = 0; i < gts.size(); ++i)
    gt_by_video[gts[i].video_id].push_back(i);
  std::vector<bool> matched(gts.size(), false);

  const std::size_t n = dets.size();
  std::vector<double> precision(n), recall(n);
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& d = dets[i];
    double best_iou = 0.0;
    std::size_t best_gt = gts.size();
    auto it = gt_by_video.find(d.video_id);
    if (it != gt_by_video.end()) {
      for (std::size_t g : it->second) {
        if (matched[g]) continue;
        const double overlap = tiou(d.start, d.end, gts[g].start, gts[g].end);
        if (overlap < threshold) continue;
        const bool better =
            best_gt == gts.size() || overlap > best_iou ||
            (overlap == best_iou && gts[g].start < gts[best_gt].start);
        if (better) {
          best_iou = overlap;
          best_gt = g;
        }
      }
    }
    if (best_gt < gts.size()) {
      matched[best_gt] = true;
      tp += 1.0;
    } else {
      fp += 1.0;
    }
    precision[i] = tp / (tp + fp);
    recall[i] = tp / static_cast<double>(gts.size());
  }

  // precision envelope from the right, integrated over recall increments
  double ap = 0.0;
  double envelope = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    envelope = std::max(envelope, precision[i]);
    const double prev_recall = i == 0 ? 0.0 : recall[i - 1];
    if (recall[i] != prev_recall) ap += (recall[i] - prev_recall) * envelope;
  }
  return ap;
}

// mAP over the evaluated classes (zero-ground-truth classes excluded)
// at the report thresholds, plus the grid-averaged avg mAP.
inline EvalReport map_report(const std::vector<NamedDetection>& dets,
                             const std::vector<GroundTruthSegment>& gts,
                             const EvalConfig& cfg) {
  cfg.validate();
  require(!cfg.eval_classes.empty(), "map_report: empty class subset");

  std::map<std::string, std::vector<NamedDetection>> dets_by_class;
  std::map<std::string, std::vector<GroundTruthSegment>> gts_by_class;
  for (const auto& c : cfg.eval_classes) {
    dets_by_class[c];
    gts_by_class[c];
  }
  for (const auto& d : dets) {
    auto it = dets_by_class.find(d.label);
    if (it != dets_by_class.end()) it->second.push_back(d);
  }
  for (const auto& g : gts) {
    auto it = gts_by_class.find(g.label);
    if (it != gts_by_class.end()) it->second.push_back(g);
  }

  auto map_at = [&](double threshold) {
    double sum = 0.0;
    int evaluated = 0;
    for (const auto& c : cfg.eval_classes) {
      if (gts_by_class[c].empty()) continue;
      sum += average_precision(dets_by_class[c], gts_by_class[c], threshold);
      ++evaluated;
    }
    return evaluated > 0 ? sum / evaluated : 0.0;
  };

  EvalReport report;
  report.thresholds = cfg.report_thresholds;
  for (double t : cfg.report_thresholds) {
    report.map_per_threshold.push_back(map_at(t));
    for (const auto& c : cfg.eval_classes)
      if (!gts_by_class[c].empty())
        report.per_class_ap[c].push_back(
            average_precision(dets_by_class[c], gts_by_class[c], t));
  }
  double grid_sum = 0.0;
  for (double t : cfg.average_grid) grid_sum += map_at(t);
  report.avg_map = grid_sum / static_cast<double>(cfg.average_grid.size());
  return report;
}

// Mean and sample standard deviation of the per-trial metrics. Failed
// trials (diverged training) are excluded and listed.
struct AggregateReport {
  std::vector<EvalReport> trials;
  std::vector<int> failed_trials;
  std::vector<double> thresholds;
  std::vector<double> map_mean, map_std;
  double avg_map_mean = 0.0;
  double avg_map_std = 0.0;

  json to_json() const {
    json j{{"thresholds", thresholds},
           {"map_mean", map_mean},
           {"map_std", map_std},
           {"avg_map_mean", avg_map_mean},
           {"avg_map_std", avg_map_std},
           {"failed_trials", failed_trials}};
    json tr = json::array();
    for (const auto& t : trials) tr.push_back(t.to_json());
    j["trials"] = tr;
    return j;
  }
};

inline AggregateReport aggregate_reports(std::vector<EvalReport> trials,
                                         std::vector<int> failed = {}) {
  require(!trials.empty(), "aggregate_reports: no successful trials");
  AggregateReport agg;
  agg.thresholds = trials[0].thresholds;
  agg.failed_trials = std::move(failed);
  const auto n = static_cast<double>(trials.size());

  auto mean_std = [&](std::function<double(const EvalReport&)> get) {
    double mean = 0.0;
    for (const auto& t : trials) mean += get(t);
    mean /= n;
    double var = 0.0;
    if (trials.size() > 1) {
      for (const auto& t : trials) {
        const double d = get(t) - mean;
        var += d * d;
      }
      var /= (n - 1.0);
    }
    return std::pair<double, double>(mean, std::sqrt(var));
  };

  for (std::size_t i = 0; i < agg.thresholds.size(); ++i) {
    auto [m, s] = mean_std(
        [i](const EvalReport& r) { return r.map_per_threshold[i]; });
    agg.map_mean.push_back(m);
    agg.map_std.push_back(s);
  }
  auto [am, as] = mean_std([](const EvalReport& r) { return r.avg_map; });
  agg.avg_map_mean = am;
  agg.avg_map_std = as;
  agg.trials = std::move(trials);
  return agg;
}

// Runs one training+evaluation per split and aggregates. train_fn maps a
// split to that trial's report; throwing NumericError marks the trial
// failed and excludes it.
inline AggregateReport run_protocol(
    const std::vector<SplitSpec>& splits,
    const std::function<EvalReport(const SplitSpec&)>& train_fn) {
  require(!splits.empty(), "run_protocol: no splits");
  std::vector<EvalReport> trials;
  std::vector<int> failed;
  for (const auto& split : splits) {
    try {
      EvalReport r = train_fn(split);
      r.trial = split.trial;
      trials.push_back(std::move(r));
    } catch (const NumericError&) {
      failed.push_back(split.trial);
    }
  }
  require(!trials.empty(), "run_protocol: every trial failed");
  return aggregate_reports(std::move(trials), std::move(failed));
}

}  // namespace stale
