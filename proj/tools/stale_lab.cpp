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
//
// stale_lab: command-line front end for the zero-shot temporal action
// detection lab. Subcommands cover the whole experiment pipeline:
//
//   gen     synthesize a corpus (features + annotations + manifest)
//   split   draw seeded seen/unseen class partitions
//   train   optimize a model on one split's seen classes
//   infer   run detection on the evaluation videos of a split
//   eval    score a detections file against ground truth
//   report  aggregate per-trial reports into one results table
//
// STALE_LAB_PRECISION={f32,f64} selects the floating-point width
// (default f64). Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stale/eval.hpp"
#include "stale/inference.hpp"
#include "stale/synthdata.hpp"
#include "stale/trainer.hpp"

namespace fs = std::filesystem;
using stale::json;

namespace {

bool use_f32() {
  const char* env = std::getenv("STALE_LAB_PRECISION");
  if (env == nullptr) return false;
  const std::string v(env);
  stale::require(v == "f32" || v == "f64",
                 "STALE_LAB_PRECISION must be f32 or f64, got: " + v);
  return v == "f32";
}

// Groups detections by video for serialization.
std::map<std::string, std::vector<stale::Detection>> group_by_video(
    const std::vector<std::pair<std::string, stale::Detection>>& dets) {
  std::map<std::string, std::vector<stale::Detection>> grouped;
  for (const auto& [video_id, det] : dets) grouped[video_id].push_back(det);
  return grouped;
}

std::string setting_label(const stale::SplitSpec& split) {
  const auto total = split.seen.size() + split.unseen.size();
  const auto pct = static_cast<int>(
      std::lround(100.0 * static_cast<double>(split.seen.size()) /
                  static_cast<double>(total)));
  return std::to_string(pct) + "v" + std::to_string(100 - pct);
}

// ---- gen ----

template <class S>
int run_gen(const std::string& config_path, const std::string& out_dir) {
  auto cfg = stale::SynthConfig::from_json(
      stale::read_json_file(config_path).value("synth", json::object()));
  auto corpus = stale::gen_corpus<S>(cfg);
  stale::save_corpus(out_dir, corpus);
  std::cout << "wrote corpus: " << corpus.videos.size() << " videos, "
            << corpus.space.size() << " classes -> " << out_dir << "\n";
  return 0;
}

// ---- split ----

template <class S>
int run_split(const std::string& corpus_dir, double seen_fraction,
              int trials, std::uint64_t seed, const std::string& out_dir) {
  auto corpus = stale::load_corpus<S>(corpus_dir);
  auto splits = stale::make_splits(corpus.space, seen_fraction, trials, seed);
  fs::create_directories(out_dir);
  for (const auto& split : splits) {
    char name[32];
    std::snprintf(name, sizeof(name), "split_%02d.json", split.trial);
    stale::write_json_file(fs::path(out_dir) / name, split.to_json());
  }
  std::cout << "wrote " << splits.size() << " splits -> " << out_dir << "\n";
  return 0;
}

// ---- train ----

template <class S>
int run_train(const std::string& corpus_dir, const std::string& split_path,
              const std::string& config_path, const std::string& out_dir,
              std::uint64_t seed_override, bool have_seed) {
  auto corpus = stale::load_corpus<S>(corpus_dir);
  auto split =
      stale::SplitSpec::from_json(stale::read_json_file(split_path));
  auto cfg_json = stale::read_json_file(config_path);
  auto cfg = stale::TrainConfig::from_json(
      cfg_json.value("train", json::object()));
  if (have_seed) cfg.seed = seed_override;
  if (cfg_json.contains("shuffle_text_embeddings") &&
      cfg_json["shuffle_text_embeddings"].get<bool>())
    corpus = stale::with_shuffled_tokens(corpus, cfg.seed);

  auto result = stale::train(corpus, split, cfg);

  fs::create_directories(out_dir);
  const auto ckpt_path = fs::path(out_dir) / "checkpoint.stale";
  save_checkpoint(ckpt_path, result.checkpoint);
  const auto loss_path = fs::path(out_dir) / "loss.csv";
  stale::write_text_file(loss_path, loss_history_csv(result.history));

  json manifest;
  manifest["version"] = stale::kVersion;
  manifest["config"] = cfg.to_json();
  manifest["config_hash"] = cfg.hash();
  manifest["split"] = split.to_json();
  manifest["corpus"] = corpus_dir;
  manifest["checkpoint"] = ckpt_path.string();
  manifest["loss_csv"] = loss_path.string();
  manifest["steps"] = result.checkpoint.step;
  stale::write_json_file(fs::path(out_dir) / "manifest.json", manifest);

  const double final_loss =
      result.history.empty()
          ? 0.0
          : static_cast<double>(result.history.back().total);
  std::cout << "trained " << result.checkpoint.step << " steps, final loss "
            << final_loss << " -> " << out_dir << "\n";
  return 0;
}

// ---- infer ----

template <class S>
int run_infer(const std::string& corpus_dir, const std::string& ckpt_path,
              const std::string& split_path, const std::string& mode,
              const std::string& config_path, const std::string& out_path) {
  auto corpus = stale::load_corpus<S>(corpus_dir);
  auto split =
      stale::SplitSpec::from_json(stale::read_json_file(split_path));
  auto ckpt = stale::load_checkpoint<S>(ckpt_path);
  stale::InferenceConfig inf_cfg;
  if (!config_path.empty()) {
    auto j = stale::read_json_file(config_path);
    inf_cfg =
        stale::InferenceConfig::from_json(j.value("inference", json::object()));
    if (j.contains("shuffle_text_embeddings") &&
        j["shuffle_text_embeddings"].get<bool>())
      corpus = stale::with_shuffled_tokens(corpus, ckpt.config_hash);
  }

  const auto& vocab = mode == "open" ? split.unseen : split.seen;
  stale::require(!vocab.empty(), "vocabulary is empty for mode " + mode);
  stale::LabelSpace vocab_space(vocab);
  stale::Mat<S> tokens = stale::class_embedding_table(corpus, vocab);

  std::vector<std::pair<std::string, stale::Detection>> all;
  for (std::size_t i = 0; i < corpus.videos.size(); ++i) {
    if (!vocab_space.contains(corpus.video_class[i])) continue;
    const auto& video = corpus.videos[i];
    stale::Tape<S> tape;
    stale::ParamBinding<S> binding(tape, ckpt.params);
    auto feats =
        stale::rescale_features(video.features, ckpt.model_cfg.snippets);
    auto g = stale::forward(tape, binding, ckpt.model_cfg, feats, tokens);
    auto out = stale::extract_output(tape, g);
    for (const auto& det : stale::detect(out, inf_cfg))
      all.emplace_back(video.id, det);
  }

  stale::write_json_file(out_path,
                         stale::detections_to_json(group_by_video(all), vocab));
  std::cout << "wrote " << all.size() << " detections -> " << out_path
            << "\n";
  return 0;
}

// ---- eval ----

template <class S>
int run_eval(const std::string& corpus_dir, const std::string& dets_path,
             const std::string& split_path, const std::string& mode,
             const std::string& config_path, const std::string& out_prefix,
             int trial_override) {
  auto corpus = stale::load_corpus<S>(corpus_dir);
  auto split =
      stale::SplitSpec::from_json(stale::read_json_file(split_path));
  auto dets = stale::detections_from_json(stale::read_json_file(dets_path));

  stale::EvalConfig eval_cfg = stale::EvalConfig::activitynet();
  if (!config_path.empty()) {
    auto j = stale::read_json_file(config_path);
    if (j.contains("eval")) eval_cfg = stale::EvalConfig::from_json(j["eval"]);
  }
  const auto& vocab = mode == "open" ? split.unseen : split.seen;
  eval_cfg.eval_classes = vocab;
  stale::LabelSpace vocab_space(vocab);

  std::vector<stale::GroundTruthSegment> gts;
  for (std::size_t i = 0; i < corpus.videos.size(); ++i) {
    if (!vocab_space.contains(corpus.video_class[i])) continue;
    for (const auto& inst : corpus.videos[i].instances)
      if (vocab_space.contains(inst.label))
        gts.push_back({corpus.videos[i].id, inst.start, inst.end,
                       inst.label});
  }

  auto report = stale::map_report(dets, gts, eval_cfg);
  report.mode = mode == "open" ? "open-set" : "closed-set";
  report.trial = trial_override >= 0 ? trial_override : split.trial;

  json out = report.to_json();
  out["setting"] = setting_label(split);
  stale::write_json_file(out_prefix + ".json", out);
  stale::write_text_file(out_prefix + ".csv", report.to_csv());
  std::cout << "avg mAP " << report.avg_map << " (" << report.mode
            << ") -> " << out_prefix << ".json\n";
  return 0;
}

// ---- report ----

int run_report(const std::vector<std::string>& report_paths,
               const std::string& out_path) {
  stale::require(!report_paths.empty(), "no report files given");
  struct Group {
    std::vector<stale::EvalReport> reports;
  };
  std::map<std::string, Group> by_setting;
  for (const auto& path : report_paths) {
    auto j = stale::read_json_file(path);
    auto report = stale::EvalReport::from_json(j);
    by_setting[j.value("setting", "all")].reports.push_back(std::move(report));
  }

  std::string csv;
  bool header_written = false;
  json summary = json::object();
  for (auto& [setting, group] : by_setting) {
    auto agg = stale::aggregate_reports(group.reports);
    if (!header_written) {
      csv = "setting,trials";
      for (double t : agg.thresholds) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), ",tIoU_%.2f", t);
        csv += buf;
      }
      csv += ",avg\n";
      header_written = true;
    }
    csv += setting + "," + std::to_string(agg.trials.size());
    for (std::size_t i = 0; i < agg.map_mean.size(); ++i) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), ",%.4f±%.4f", agg.map_mean[i],
                    agg.map_std[i]);
      csv += buf;
    }
    char buf[48];
    std::snprintf(buf, sizeof(buf), ",%.4f±%.4f\n", agg.avg_map_mean,
                  agg.avg_map_std);
    csv += buf;
    summary[setting] = agg.to_json();
  }

  stale::write_text_file(out_path, csv);
  stale::write_json_file(out_path + ".json", summary);
  std::cout << "wrote " << by_setting.size() << " setting rows -> "
            << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zero-shot temporal action detection lab"};
  app.require_subcommand(1);

  std::string config_path, corpus_dir, split_path, ckpt_path, out_path;
  std::string mode = "open", dets_path;
  double seen_fraction = 0.75;
  int trials = 10;
  int trial_override = -1;
  std::uint64_t seed = 0;
  bool have_seed = false;
  std::vector<std::string> report_paths;

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  gen->add_option("--config", config_path)->required();
  gen->add_option("--out", out_path)->required();

  auto* split_cmd = app.add_subcommand("split", "draw seen/unseen splits");
  split_cmd->add_option("--corpus", corpus_dir)->required();
  split_cmd->add_option("--seen-fraction", seen_fraction);
  split_cmd->add_option("--trials", trials);
  split_cmd->add_option("--seed", seed);
  split_cmd->add_option("--out", out_path)->required();

  auto* train_cmd = app.add_subcommand("train", "train on a split");
  train_cmd->add_option("--corpus", corpus_dir)->required();
  train_cmd->add_option("--split", split_path)->required();
  train_cmd->add_option("--config", config_path)->required();
  train_cmd->add_option("--out", out_path)->required();
  train_cmd->add_option("--seed", seed)->each([&](const std::string&) {
    have_seed = true;
  });

  auto* infer_cmd = app.add_subcommand("infer", "detect on eval videos");
  infer_cmd->add_option("--corpus", corpus_dir)->required();
  infer_cmd->add_option("--checkpoint", ckpt_path)->required();
  infer_cmd->add_option("--split", split_path)->required();
  infer_cmd->add_option("--mode", mode)
      ->check(CLI::IsMember({"open", "closed"}));
  infer_cmd->add_option("--config", config_path);
  infer_cmd->add_option("--out", out_path)->required();

  auto* eval_cmd = app.add_subcommand("eval", "score detections");
  eval_cmd->add_option("--corpus", corpus_dir)->required();
  eval_cmd->add_option("--detections", dets_path)->required();
  eval_cmd->add_option("--split", split_path)->required();
  eval_cmd->add_option("--mode", mode)
      ->check(CLI::IsMember({"open", "closed"}));
  eval_cmd->add_option("--config", config_path);
  eval_cmd->add_option("--trial", trial_override);
  eval_cmd->add_option("--out", out_path)->required();

  auto* report_cmd =
      app.add_subcommand("report", "aggregate trial reports into a table");
  report_cmd->add_option("--reports", report_paths)->required();
  report_cmd->add_option("--out", out_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const bool f32 = use_f32();
    if (gen->parsed())
      return f32 ? run_gen<float>(config_path, out_path)
                 : run_gen<double>(config_path, out_path);
    if (split_cmd->parsed())
      return f32 ? run_split<float>(corpus_dir, seen_fraction, trials, seed,
                                    out_path)
                 : run_split<double>(corpus_dir, seen_fraction, trials, seed,
                                     out_path);
    if (train_cmd->parsed())
      return f32 ? run_train<float>(corpus_dir, split_path, config_path,
                                    out_path, seed, have_seed)
                 : run_train<double>(corpus_dir, split_path, config_path,
                                     out_path, seed, have_seed);
    if (infer_cmd->parsed())
      return f32 ? run_infer<float>(corpus_dir, ckpt_path, split_path, mode,
                                    config_path, out_path)
                 : run_infer<double>(corpus_dir, ckpt_path, split_path, mode,
                                     config_path, out_path);
    if (eval_cmd->parsed())
      return f32 ? run_eval<float>(corpus_dir, dets_path, split_path, mode,
                                   config_path, out_path, trial_override)
                 : run_eval<double>(corpus_dir, dets_path, split_path, mode,
                                    config_path, out_path, trial_override);
    if (report_cmd->parsed()) return run_report(report_paths, out_path);
  } catch (const stale::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const stale::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
