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
#include "ctxalign/synthetic.h"
#include "doctest.h"
#include "test_util.h"

using namespace ctxalign;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct SmallRun {
  fs::path dir;
  ExperimentConfig config;
  ExperimentData data;
};

SmallRun small_run(const std::string& name) {
  SmallRun r;
  r.dir = ctxalign::testing::temp_dir(name);
  SyntheticSpec spec;
  spec.n_scenes = 24;
  write_synthetic(generate_synthetic(spec, 1), r.dir / "data");
  r.config.corpus = r.dir / "data/corpus.jsonl";
  r.config.scenes = r.dir / "data/scenes.jsonl";
  r.config.synonyms = r.dir / "data/synonyms.json";
  r.config.categories = r.dir / "data/categories.json";
  r.config.base_classes = r.dir / "data/base_classes.json";
  r.config.output_dir = r.dir / "runs";
  r.config.steps = 10;
  r.config.batch = 4;
  r.config.finetune_steps = 5;
  r.data = load_experiment_data(r.config);
  return r;
}

}  // namespace

TEST_CASE("config json round trip and overrides") {
  ExperimentConfig c;
  c.seed = 9;
  c.mode = GroundingMode::kContextFree;
  c.dims.n_layers = 1;
  ExperimentConfig d;
  apply_config_json(d, config_to_json(c));
  CHECK(config_to_json(d) == config_to_json(c));
  CHECK(config_hash(d) == config_hash(c));
  apply_config_json(d, json{{"steps", 5}, {"dims", {{"d", 8}}}});
  CHECK(d.steps == 5);
  CHECK(d.dims.d == 8);
  CHECK(d.dims.n_layers == 1);
  CHECK(config_hash(d) != config_hash(c));
  CHECK(config_hash(c).size() == 16);
  CHECK_THROWS_AS(apply_config_json(d, json{{"stepz", 5}}), Error);
  CHECK_THROWS_AS(apply_config_json(d, json{{"steps", "many"}}), Error);
  CHECK_THROWS_AS(apply_config_json(d, json{{"connectivity", 6}}), Error);
  CHECK_THROWS_AS(apply_config_json(d, json{{"dims", {{"depth", 2}}}}), Error);
}

TEST_CASE("config file loading") {
  const auto dir = ctxalign::testing::temp_dir("config");
  std::ofstream(dir / "c.json") << R"({"mode": "context-free", "lr": 0.1})";
  const ExperimentConfig c = load_config(dir / "c.json");
  CHECK(c.mode == GroundingMode::kContextFree);
  CHECK(c.lr == 0.1);
  CHECK(c.steps == 2000);
  CHECK_THROWS_AS(load_config(dir / "none.json"), Error);
}

TEST_CASE("validation names the missing path") {
  ExperimentConfig c;
  c.corpus = "/nonexistent/corpus.jsonl";
  try {
    validate_config(c);
    FAIL("expected Error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("corpus") != std::string::npos);
  }
  SmallRun r = small_run("validate");
  CHECK_NOTHROW(validate_config(r.config));
  ExperimentConfig bad = r.config;
  bad.batch = 0;
  CHECK_THROWS_AS(validate_config(bad), Error);
  bad = r.config;
  bad.eval_fraction = 1.0;
  CHECK_THROWS_AS(validate_config(bad), Error);
  bad = r.config;
  bad.ks = {0};
  CHECK_THROWS_AS(validate_config(bad), Error);
  bad = r.config;
  bad.base_classes = r.dir / "missing.json";
  CHECK_THROWS_AS(run_experiment(bad), Error);
}

TEST_CASE("provenance") {
  ExperimentConfig c;
  c.seed = 4;
  const json p = provenance(c);
  CHECK(p["config_hash"] == config_hash(c));
  CHECK(p["seed"] == 4);
  CHECK(p["version"].get<std::string>().rfind("v", 0) == 0);
}

TEST_CASE("data split holds out trailing scenes") {
  SmallRun r = small_run("split");
  const DataSplit s = split_data(r.data, 0.25);
  CHECK(s.eval_scenes.size() == 6);
  CHECK(s.train_scenes.size() == 18);
  CHECK(s.eval_scenes.front().image_id == "img18");
  CHECK(s.eval_corpus.size() == 6);
  CHECK(s.train_corpus.size() == 18);
  const DataSplit all = split_data(r.data, 0.0);
  CHECK(all.eval_scenes.size() == 24);
  CHECK(all.train_scenes.size() == 24);
}

TEST_CASE("zero-step run writes a complete run directory") {
  SmallRun r = small_run("zero-steps");
  r.config.steps = 0;
  r.config.finetune_steps = 0;
  const fs::path dir = run_experiment(r.config);
  CHECK(dir.parent_path() == r.config.output_dir);
  CHECK(dir.filename().string().rfind("run-", 0) == 0);
  for (const char* f : {"config.json", "checkpoint.json", "checkpoint_finetuned.json",
                        "train_log.csv", "grounding.json", "retrieval.json", "probe.json",
                        "classification.json", "metrics.json"}) {
    CAPTURE(f);
    CHECK(fs::exists(dir / f));
  }
  for (const char* f : {"config.json", "grounding.json", "retrieval.json", "probe.json",
                        "classification.json", "metrics.json"}) {
    const json j = json::parse(ctxalign::testing::read_file(dir / f));
    CHECK(j["provenance"]["config_hash"] == config_hash(r.config));
  }
  const EncoderStack enc = load_checkpoint(dir / "checkpoint.json");
  CHECK(enc.step == 0);
  const json cls = json::parse(ctxalign::testing::read_file(dir / "classification.json"));
  CHECK(cls.contains("base"));
  CHECK(cls.contains("union"));
  // A second run in the same second lands in its own directory.
  CHECK(run_experiment(r.config) != dir);
}

TEST_CASE("pipeline metrics are deterministic") {
  SmallRun r = small_run("deterministic");
  const PipelineResult a = run_pipeline(r.config, r.data);
  const PipelineResult b = run_pipeline(r.config, r.data);
  CHECK(a.metrics() == b.metrics());
  CHECK(a.log.size() == 10);
  CHECK(a.metrics()["train"]["steps"] == 10);
  const double acc = headline_accuracy(a.classification);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}

TEST_CASE("stage failures name the stage") {
  SmallRun r = small_run("stage");
  r.config.dims.d_v = 7;
  try {
    run_pipeline(r.config, r.data);
    FAIL("expected Error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).rfind("pretrain: ", 0) == 0);
  }
}

TEST_CASE("headline accuracy") {
  CHECK(headline_accuracy(json{{"base", {{"base_mean", 0.5}}}}) == 0.5);
  CHECK(headline_accuracy(json{{"base", {{"base_mean", 0.5}}},
                               {"union", {{"all_mean", 0.25}}}}) == 0.25);
}

TEST_CASE("ablation baseline rows match the plain pipeline") {
  SmallRun r = small_run("ablation");
  r.config.steps = 5;
  const json report =
      ablate_context(r.config, r.data, {ContextKind::kAdj}, {GroundingMode::kContextFree});
  CHECK(report["provenance"]["config_hash"] == config_hash(r.config));
  const json& runs = report["modes"]["context-free"]["runs"];
  REQUIRE(runs.size() == 2 * kAblationSeeds);
  ExperimentConfig cfg = r.config;
  cfg.mode = GroundingMode::kContextFree;
  const PipelineResult base = run_pipeline(cfg, r.data);
  CHECK(runs[0]["kind"] == "none");
  CHECK(runs[0]["metrics"] == base.metrics());
  CHECK(runs[1]["kind"] == "adj");
  CHECK(runs[1]["delta_accuracy"].get<double>() ==
        doctest::Approx(runs[1]["accuracy"].get<double>() - runs[0]["accuracy"].get<double>()));
  double mean = 0;
  for (int s = 0; s < kAblationSeeds; ++s) {
    mean += runs[2 * s + 1]["delta_accuracy"].get<double>();
  }
  CHECK(report["modes"]["context-free"]["mean_delta"]["adj"]["accuracy"].get<double>() ==
        doctest::Approx(mean / kAblationSeeds));
}

TEST_CASE("ablation without kinds reports only baselines") {
  SmallRun r = small_run("ablation-empty");
  r.config.steps = 2;
  const json report = ablate_context(r.config, r.data, {});
  for (const char* mode : {"context-free", "contextualized"}) {
    const json& runs = report["modes"][mode]["runs"];
    REQUIRE(runs.size() == kAblationSeeds);
    for (const auto& run : runs) CHECK(run["kind"] == "none");
    CHECK(report["modes"][mode]["mean_delta"].empty());
  }
}

TEST_CASE("report json shapes") {
  ProbeReport p{0.5, 0.4, 0.3, 0.2};
  const json j = to_json(p);
  CHECK(j["deltas"]["drop"].get<double>() == doctest::Approx(-0.1));
  CHECK(j["deltas"]["random"].get<double>() == doctest::Approx(-0.3));
  RetrievalReport rr;
  rr.recall[5] = 0.5;
  CHECK(to_json(rr)["recall"]["5"] == 0.5);
  ClassificationReport cr;
  CHECK(to_json(cr)["target_mean"].is_null());
  ApReport ap;
  CHECK(to_json(ap)["per_caption_mean_ap"].is_null());
}
