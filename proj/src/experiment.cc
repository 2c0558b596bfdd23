// Copyright 2026 The ctxalign Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ctxalign/experiment.h"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#ifndef CTXALIGN_VERSION
#define CTXALIGN_VERSION "v0.0.0-unknown"
#endif

namespace ctxalign {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string_view to_string(Connectivity c) {
  return c == Connectivity::kEight ? "8" : "4";
}

template <typename F>
auto stage(std::string_view name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw Error(std::string(name) + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<std::string> sorted_names(const Vocabulary& vocab, bool base) {
  std::vector<std::string> out;
  const auto& names = base ? vocab.base_names() : vocab.target_names();
  out.assign(names.begin(), names.end());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["mode"] = std::string(to_string(c.mode));
  j["negatives"] = std::string(to_string(c.negatives));
  j["freeze_language"] = c.freeze.language_frozen;
  j["freeze_v2l"] = c.freeze.v2l_frozen;
  j["use_prompt"] = c.use_prompt;
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["seed"] = c.seed;
  j["normalize_sim"] = c.normalize_sim;
  j["finetune_steps"] = c.finetune_steps;
  j["finetune_lr"] = c.finetune_lr;
  j["t"] = c.t;
  j["th_sim"] = c.th_sim;
  j["stride"] = c.stride;
  j["connectivity"] = std::stoi(std::string(to_string(c.connectivity)));
  j["ks"] = c.ks;
  j["eval_fraction"] = c.eval_fraction;
  j["dims"] = {{"d", c.dims.d},           {"d_v", c.dims.d_v},
               {"d_r", c.dims.d_r},       {"d_ff", c.dims.d_ff},
               {"n_layers", c.dims.n_layers}, {"pos_scale", c.dims.pos_scale}};
  j["corpus"] = c.corpus.string();
  j["scenes"] = c.scenes.string();
  j["synonyms"] = c.synonyms.string();
  j["categories"] = c.categories.string();
  j["base_classes"] = c.base_classes.string();
  j["output_dir"] = c.output_dir.string();
  return j;
}

void apply_config_json(ExperimentConfig& c, const json& j) {
  if (!j.is_object()) throw Error("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "mode") c.mode = parse_grounding_mode(v.get<std::string>());
      else if (key == "negatives") c.negatives = parse_negative_mode(v.get<std::string>());
      else if (key == "freeze_language") c.freeze.language_frozen = v.get<bool>();
      else if (key == "freeze_v2l") c.freeze.v2l_frozen = v.get<bool>();
      else if (key == "use_prompt") c.use_prompt = v.get<bool>();
      else if (key == "steps") c.steps = v.get<int>();
      else if (key == "batch") c.batch = v.get<int>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "normalize_sim") c.normalize_sim = v.get<bool>();
      else if (key == "finetune_steps") c.finetune_steps = v.get<int>();
      else if (key == "finetune_lr") c.finetune_lr = v.get<double>();
      else if (key == "t") c.t = v.get<double>();
      else if (key == "th_sim") c.th_sim = v.get<double>();
      else if (key == "stride") c.stride = v.get<double>();
      else if (key == "connectivity") {
        const int n = v.get<int>();
        if (n != 4 && n != 8) throw Error("connectivity must be 4 or 8");
        c.connectivity = n == 8 ? Connectivity::kEight : Connectivity::kFour;
      } else if (key == "ks") c.ks = v.get<std::vector<int>>();
      else if (key == "eval_fraction") c.eval_fraction = v.get<double>();
      else if (key == "dims") {
        for (const auto& [dk, dv] : v.items()) {
          if (dk == "d") c.dims.d = dv.get<int>();
          else if (dk == "d_v") c.dims.d_v = dv.get<int>();
          else if (dk == "d_r") c.dims.d_r = dv.get<int>();
          else if (dk == "d_ff") c.dims.d_ff = dv.get<int>();
          else if (dk == "n_layers") c.dims.n_layers = dv.get<int>();
          else if (dk == "pos_scale") c.dims.pos_scale = dv.get<double>();
          else throw Error("unknown dims key '" + dk + "'");
        }
      } else if (key == "corpus") c.corpus = v.get<std::string>();
      else if (key == "scenes") c.scenes = v.get<std::string>();
      else if (key == "synonyms") c.synonyms = v.get<std::string>();
      else if (key == "categories") c.categories = v.get<std::string>();
      else if (key == "base_classes") c.base_classes = v.get<std::string>();
      else if (key == "output_dir") c.output_dir = v.get<std::string>();
      else throw Error("unknown config key '" + key + "'");
    } catch (const json::exception& e) {
      throw Error("config key '" + key + "': " + e.what());
    }
  }
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  ExperimentConfig config;
  apply_config_json(config, j);
  return config;
}

void validate_config(const ExperimentConfig& c) {
  const auto require = [](const fs::path& p, const char* what) {
    if (p.empty()) throw Error(std::string(what) + " path is not set");
    if (!fs::exists(p)) {
      throw Error(std::string(what) + " path does not exist: " + p.string());
    }
  };
  require(c.corpus, "corpus");
  require(c.scenes, "scenes");
  require(c.synonyms, "synonyms");
  if (!c.categories.empty()) require(c.categories, "categories");
  if (!c.base_classes.empty()) require(c.base_classes, "base_classes");
  if (c.steps < 0 || c.finetune_steps < 0) throw Error("steps must be >= 0");
  if (c.batch < 1) throw Error("batch must be >= 1");
  if (!(c.lr > 0) || !(c.finetune_lr > 0)) throw Error("lr must be > 0");
  if (c.eval_fraction < 0 || c.eval_fraction >= 1) {
    throw Error("eval_fraction must lie in [0, 1)");
  }
  for (int k : c.ks) {
    if (k < 1) throw Error("retrieval k must be >= 1");
  }
}

std::string config_hash(const ExperimentConfig& config) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0')
     << fnv1a(config_to_json(config).dump());
  return os.str();
}

std::string version_string() { return CTXALIGN_VERSION; }

json provenance(const ExperimentConfig& config) {
  return {{"config_hash", config_hash(config)},
          {"seed", config.seed},
          {"version", version_string()}};
}

// ---------------------------------------------------------------------------
// Data

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  validate_config(config);
  ExperimentData data;
  data.corpus = load_corpus(config.corpus);
  data.scenes = load_scenes(config.scenes);
  data.synonyms = load_synonyms(config.synonyms);
  if (!config.categories.empty()) {
    data.categories = load_category_lists(config.categories);
  }
  if (!config.base_classes.empty()) {
    std::ifstream in(config.base_classes);
    try {
      for (const auto& name : json::parse(in)) {
        data.base_names.insert(name.get<std::string>());
      }
    } catch (const json::exception& e) {
      throw Error(config.base_classes.string() + ": " + e.what());
    }
  } else {
    for (const auto& entry : data.synonyms) data.base_names.insert(entry.name);
  }
  return data;
}

DataSplit split_data(const ExperimentData& data, double eval_fraction) {
  DataSplit split;
  const std::size_t n = data.scenes.size();
  const std::size_t n_eval =
      eval_fraction > 0
          ? static_cast<std::size_t>(std::ceil(eval_fraction * double(n)))
          : 0;
  std::set<std::string> eval_ids;
  for (std::size_t i = 0; i < n; ++i) {
    if (i + n_eval >= n) {
      split.eval_scenes.push_back(data.scenes[i]);
      eval_ids.insert(data.scenes[i].image_id);
    } else {
      split.train_scenes.push_back(data.scenes[i]);
    }
  }
  for (const auto& caption : data.corpus) {
    if (eval_ids.count(caption.image_id)) {
      split.eval_corpus.push_back(caption);
    } else {
      split.train_corpus.push_back(caption);
    }
  }
  if (n_eval == 0) {
    split.eval_scenes = split.train_scenes;
    split.eval_corpus = split.train_corpus;
  }
  return split;
}

// ---------------------------------------------------------------------------
// Reports

json to_json(const ApReport& r) {
  json j;
  j["per_class_ap"] = r.per_class_ap;
  j["mean_ap"] = r.mean_ap;
  j["per_caption_mean_ap"] =
      r.per_caption_mean_ap ? json(*r.per_caption_mean_ap) : json(nullptr);
  j["n_predictions"] = r.n_predictions;
  j["n_gt"] = r.n_gt;
  return j;
}

json to_json(const RetrievalReport& r) {
  json j;
  json recall = json::object(), precision = json::object();
  for (const auto& [k, v] : r.recall) recall[std::to_string(k)] = v;
  for (const auto& [k, v] : r.precision) precision[std::to_string(k)] = v;
  j["recall"] = recall;
  j["precision"] = precision;
  j["n_queries"] = r.n_queries;
  j["n_gallery"] = r.n_gallery;
  j["warnings"] = r.warnings;
  return j;
}

json to_json(const ProbeReport& r) {
  return {{"as_is", r.as_is},
          {"drop", r.drop},
          {"plausible", r.plausible},
          {"random", r.random},
          {"deltas",
           {{"drop", r.delta_drop()},
            {"plausible", r.delta_plausible()},
            {"random", r.delta_random()}}}};
}

json to_json(const ClassificationReport& r) {
  const auto opt = [](const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
  };
  json j;
  j["class_set"] = std::string(to_string(r.class_set));
  j["classes"] = r.classes;
  j["per_class_accuracy"] = r.per_class_accuracy;
  j["base_mean"] = opt(r.base_mean);
  j["target_mean"] = opt(r.target_mean);
  j["all_mean"] = opt(r.all_mean);
  j["background_accuracy"] = opt(r.background_accuracy);
  j["n_cells"] = r.n_cells;
  return j;
}

json PipelineResult::metrics() const {
  json train = json::object();
  if (!log.empty()) {
    const auto& last = log.back();
    train = {{"steps", last.step + 1},
             {"loss_total", last.loss_total},
             {"pos_score_mean", last.pos_score_mean},
             {"neg_score_mean", last.neg_score_mean}};
  }
  return {{"train", train},
          {"grounding", grounding},
          {"retrieval", retrieval},
          {"probe", probe},
          {"classification", classification}};
}

double headline_accuracy(const json& classification) {
  if (classification.contains("union")) {
    return classification["union"]["all_mean"].get<double>();
  }
  return classification["base"]["base_mean"].get<double>();
}

// ---------------------------------------------------------------------------
// Pipeline

PipelineResult run_pipeline(const ExperimentConfig& config,
                            const ExperimentData& data) {
  const Vocabulary vocab = stage("vocabulary", [&] {
    return build_vocabulary(data.synonyms, data.base_names);
  });
  const DataSplit split = split_data(data, config.eval_fraction);
  const AdjNounStats stats = stage("stats", [&] {
    return compute_adj_noun_stats(split.train_corpus, vocab);
  });

  PipelineResult result;
  stage("pretrain", [&] {
    EncoderStack init = create_encoder(
        config.dims, build_token_inventory(data.corpus, vocab), config.seed);
    TrainConfig tc;
    tc.mode = config.mode;
    tc.negatives = config.negatives;
    tc.freeze = config.freeze;
    tc.steps = config.steps;
    tc.batch = config.batch;
    tc.lr = config.lr;
    tc.seed = config.seed;
    tc.normalize_sim = config.normalize_sim;
    if (config.steps == 0) {
      init.freeze = config.freeze;
      result.pretrained = std::move(init);
      return;
    }
    TrainResult trained =
        pretrain(split.train_corpus, split.train_scenes, std::move(init),
                 vocab, stats, tc);
    result.pretrained = std::move(trained.encoder);
    result.log = std::move(trained.log);
  });

  stage("finetune", [&] {
    FinetuneConfig fc;
    fc.steps = config.finetune_steps;
    fc.batch = config.batch;
    fc.lr = config.finetune_lr;
    fc.v2l_frozen = config.freeze.v2l_frozen;
    fc.use_prompt = config.use_prompt;
    fc.mode = config.mode;
    fc.seed = config.seed;
    result.finetuned = config.finetune_steps > 0
                           ? finetune_classifier(result.pretrained,
                                                 split.train_scenes, vocab, fc)
                           : result.pretrained;
  });

  PhraseGroundingConfig pg;
  pg.mode = config.mode;
  pg.t = config.t;
  pg.th_sim = config.th_sim;
  pg.ground.stride = config.stride;
  pg.ground.connectivity = config.connectivity;
  pg.seed = config.seed;

  result.grounding = stage("eval-grounding", [&] {
    return to_json(phrase_grounding_ap(split.eval_corpus, split.eval_scenes,
                                       result.pretrained, vocab, stats,
                                       ProbeScenario::kAsIs, pg));
  });
  result.probe = stage("probe-attributes", [&] {
    return to_json(attribute_probe(split.eval_corpus, split.eval_scenes,
                                   result.pretrained, vocab, stats, pg));
  });
  result.retrieval = stage("eval-retrieval", [&] {
    const auto gallery = build_gallery(split.eval_scenes, result.pretrained);
    return to_json(retrieval_eval(
        gallery_queries(gallery, result.pretrained, config.mode,
                        data.categories.color),
        gallery, config.ks));
  });
  result.classification = stage("classify", [&] {
    json j = json::object();
    const auto run = [&](ClassSet set) {
      return to_json(classify_regions(split.eval_scenes, result.finetuned,
                                      vocab, set, config.mode,
                                      config.use_prompt));
    };
    if (!sorted_names(vocab, true).empty()) j["base"] = run(ClassSet::kBase);
    if (!sorted_names(vocab, false).empty()) {
      j["target"] = run(ClassSet::kTarget);
      j["union"] = run(ClassSet::kUnion);
    }
    return j;
  });
  return result;
}

fs::path run_experiment(const ExperimentConfig& config) {
  validate_config(config);
  const ExperimentData data =
      stage("load", [&] { return load_experiment_data(config); });
  return run_experiment(config, data);
}

fs::path run_experiment(const ExperimentConfig& config,
                        const ExperimentData& data) {
  const std::string hash = config_hash(config);
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream name;
  name << "run-" << std::put_time(&tm, "%Y%m%d-%H%M%S") << '-'
       << hash.substr(0, 8);
  fs::path dir = config.output_dir / name.str();
  for (int i = 1; fs::exists(dir); ++i) {
    dir = config.output_dir / (name.str() + "-" + std::to_string(i));
  }
  fs::create_directories(dir);

  const json prov = provenance(config);
  json cfg = config_to_json(config);
  cfg["provenance"] = prov;
  write_json(dir / "config.json", cfg);

  const PipelineResult result = run_pipeline(config, data);
  save_checkpoint(dir / "checkpoint.json", result.pretrained);
  save_checkpoint(dir / "checkpoint_finetuned.json", result.finetuned);
  write_training_log(dir / "train_log.csv", result.log);
  const auto emit = [&](const char* file, json j) {
    j["provenance"] = prov;
    write_json(dir / file, j);
  };
  emit("grounding.json", result.grounding);
  emit("retrieval.json", result.retrieval);
  emit("probe.json", result.probe);
  emit("classification.json", result.classification);
  emit("metrics.json", result.metrics());
  return dir;
}

// ---------------------------------------------------------------------------
// Ablation

json ablate_context(const ExperimentConfig& config, const ExperimentData& data,
                    const std::vector<ContextKind>& kinds,
                    const std::vector<GroundingMode>& modes) {
  std::vector<std::string> kind_names;
  for (ContextKind k : kinds) kind_names.emplace_back(to_string(k));

  json report;
  report["provenance"] = provenance(config);
  report["kinds"] = kind_names;
  report["modes"] = json::object();

  Vocabulary vocab = build_vocabulary(data.synonyms, data.base_names);
  const DataSplit split = split_data(data, config.eval_fraction);
  std::set<std::string> train_ids;
  for (const auto& c : split.train_corpus) train_ids.insert(c.caption_id);

  for (GroundingMode mode : modes) {
    json runs = json::array();
    std::map<std::string, std::vector<double>> d_acc, d_ap;
    for (int s = 0; s < kAblationSeeds; ++s) {
      ExperimentConfig cfg = config;
      cfg.mode = mode;
      cfg.seed = config.seed + static_cast<std::uint64_t>(s);
      const PipelineResult base = run_pipeline(cfg, data);
      const json base_metrics = base.metrics();
      const double base_acc = headline_accuracy(base.classification);
      const double base_ap = base.grounding["mean_ap"].get<double>();
      runs.push_back({{"seed", cfg.seed},
                      {"kind", "none"},
                      {"config_hash", config_hash(cfg)},
                      {"accuracy", base_acc},
                      {"mean_ap", base_ap},
                      {"metrics", base_metrics}});
      for (ContextKind kind : kinds) {
        ExperimentData removed = data;
        for (auto& caption : removed.corpus) {
          // Only the training captions lose context; evaluation is unchanged.
          if (train_ids.count(caption.caption_id)) {
            caption = remove_context(caption, kind, vocab);
          }
        }
        const PipelineResult run = run_pipeline(cfg, removed);
        const double acc = headline_accuracy(run.classification);
        const double ap = run.grounding["mean_ap"].get<double>();
        const std::string name(to_string(kind));
        d_acc[name].push_back(acc - base_acc);
        d_ap[name].push_back(ap - base_ap);
        runs.push_back({{"seed", cfg.seed},
                        {"kind", name},
                        {"config_hash", config_hash(cfg)},
                        {"accuracy", acc},
                        {"mean_ap", ap},
                        {"delta_accuracy", acc - base_acc},
                        {"delta_mean_ap", ap - base_ap},
                        {"metrics", run.metrics()}});
      }
    }
    json deltas = json::object();
    for (const auto& name : kind_names) {
      const auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / double(v.size());
      };
      deltas[name] = {{"accuracy", mean(d_acc[name])},
                      {"mean_ap", mean(d_ap[name])}};
    }
    report["modes"][std::string(to_string(mode))] = {{"runs", runs},
                                                     {"mean_delta", deltas}};
  }
  return report;
}

}  // namespace ctxalign
