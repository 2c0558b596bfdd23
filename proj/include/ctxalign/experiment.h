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

// End-to-end experiment runner: configuration, the pretrain / finetune /
// evaluate pipeline, run directories and the context-removal ablation.

#ifndef CTXALIGN_EXPERIMENT_H_
#define CTXALIGN_EXPERIMENT_H_

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "ctxalign/corpus.h"
#include "ctxalign/encoder.h"
#include "ctxalign/evaluation.h"
#include "ctxalign/negatives.h"
#include "ctxalign/scene.h"
#include "ctxalign/training.h"
#include "json.hpp"

namespace ctxalign {

struct ExperimentConfig {
  GroundingMode mode = GroundingMode::kContextualized;
  NegativeMode negatives = NegativeMode::kNone;
  FreezeFlags freeze;
  bool use_prompt = true;
  int steps = 2000;
  int batch = 8;
  double lr = 0.05;
  std::uint64_t seed = 0;
  bool normalize_sim = false;

  int finetune_steps = 300;
  double finetune_lr = 0.05;

  double t = 30;
  double th_sim = 10;
  double stride = 32;
  Connectivity connectivity = Connectivity::kFour;
  std::vector<int> ks = {1, 5, 10, 50};
  // Trailing fraction of the scenes held out for evaluation; 0 evaluates on
  // the training scenes.
  double eval_fraction = 0.25;

  EncoderDims dims;

  std::filesystem::path corpus;
  std::filesystem::path scenes;
  std::filesystem::path synonyms;
  std::filesystem::path categories;
  // JSON array of base class names; empty means every class is a base class.
  std::filesystem::path base_classes;
  std::filesystem::path output_dir = "runs";
};

nlohmann::json config_to_json(const ExperimentConfig& config);
// Overwrites the fields present in `j`; unknown keys are an error.
void apply_config_json(ExperimentConfig& config, const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

// Throws Error naming the first missing path or bad value.
void validate_config(const ExperimentConfig& config);

// 16 hex digits of a hash of the canonical config JSON.
std::string config_hash(const ExperimentConfig& config);

// git-describe style, fixed at build time.
std::string version_string();

// {config_hash, seed, version}
nlohmann::json provenance(const ExperimentConfig& config);

struct ExperimentData {
  std::vector<TaggedCaption> corpus;
  std::vector<SceneGrid> scenes;
  std::vector<SynonymEntry> synonyms;
  std::set<std::string> base_names;
  CategoryLists categories;
};

ExperimentData load_experiment_data(const ExperimentConfig& config);

struct DataSplit {
  std::vector<SceneGrid> train_scenes;
  std::vector<SceneGrid> eval_scenes;
  std::vector<TaggedCaption> train_corpus;
  std::vector<TaggedCaption> eval_corpus;
};

DataSplit split_data(const ExperimentData& data, double eval_fraction);

struct PipelineResult {
  EncoderStack pretrained;
  EncoderStack finetuned;
  std::vector<TrainLogRow> log;
  nlohmann::json grounding;
  nlohmann::json retrieval;
  nlohmann::json probe;
  nlohmann::json classification;

  // Every report together, without provenance.
  nlohmann::json metrics() const;
};

// Pretrains on the training split, finetunes the classifier on its base
// classes and evaluates on the held-out split. Stage failures are rethrown
// as Error("<stage>: ...").
PipelineResult run_pipeline(const ExperimentConfig& config,
                            const ExperimentData& data);

// Runs the pipeline and writes config.json, checkpoint.json,
// train_log.csv and one JSON per report into a fresh timestamped directory
// under config.output_dir, which is returned.
std::filesystem::path run_experiment(const ExperimentConfig& config);
std::filesystem::path run_experiment(const ExperimentConfig& config,
                                     const ExperimentData& data);

// The scalar compared across ablation runs: union-set mean accuracy when
// target classes exist, base-set mean accuracy otherwise.
double headline_accuracy(const nlohmann::json& classification);

inline constexpr int kAblationSeeds = 3;

// For each grounding mode and seeds config.seed .. config.seed + 2, pretrains
// on the unmodified corpus and on the corpus with each context kind removed,
// and reports per-run metrics plus mean deltas against the baseline.
nlohmann::json ablate_context(const ExperimentConfig& config,
                              const ExperimentData& data,
                              const std::vector<ContextKind>& kinds,
                              const std::vector<GroundingMode>& modes = {
                                  GroundingMode::kContextFree,
                                  GroundingMode::kContextualized});

nlohmann::json to_json(const ApReport& report);
nlohmann::json to_json(const RetrievalReport& report);
nlohmann::json to_json(const ProbeReport& report);
nlohmann::json to_json(const ClassificationReport& report);

}  // namespace ctxalign

#endif  // CTXALIGN_EXPERIMENT_H_
