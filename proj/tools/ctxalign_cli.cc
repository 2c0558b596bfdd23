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

// ctxalign command line. Every subcommand writes JSON (or JSON lines) to
// stdout, or to the file given by --out.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctxalign/corpus.h"
#include "ctxalign/encoder.h"
#include "ctxalign/evaluation.h"
#include "ctxalign/experiment.h"
#include "ctxalign/negatives.h"
#include "ctxalign/synthetic.h"
#include "ctxalign/training.h"
#include "json.hpp"

namespace {

using nlohmann::json;
using namespace ctxalign;

// Flags shared by the pipeline subcommands. Unset flags leave the value from
// --config (or the built-in default) alone.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::string> mode, negatives, corpus, scenes, synonyms,
      categories, base_classes, output_dir;
  std::optional<bool> freeze_language, freeze_v2l, use_prompt, normalize_sim;
  std::optional<int> steps, batch, finetune_steps, connectivity;
  std::optional<double> lr, finetune_lr, t, th_sim, stride, eval_fraction;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> ks;

  void add_data(CLI::App* app) {
    app->add_option("--config", config_path, "Experiment config JSON");
    app->add_option("--corpus", corpus, "Tagged corpus (JSON lines)");
    app->add_option("--scenes", scenes, "Scene grids (JSON lines)");
    app->add_option("--synonyms", synonyms, "Class synonym file");
    app->add_option("--categories", categories, "Adjective category lists");
    app->add_option("--base-classes", base_classes, "JSON array of base classes");
    app->add_option("--seed", seed, "Random seed");
  }

  void add_model(CLI::App* app) {
    app->add_option("--mode", mode, "context-free | contextualized");
    app->add_option("--use-prompt", use_prompt, "Embed class names in a prompt");
  }

  void add_train(CLI::App* app) {
    app->add_option("--negatives", negatives,
                    "none | adj | noun | adj+noun | random-adj");
    app->add_option("--freeze-language", freeze_language);
    app->add_option("--freeze-v2l", freeze_v2l);
    app->add_option("--steps", steps);
    app->add_option("--batch", batch);
    app->add_option("--lr", lr);
    app->add_option("--normalize-sim", normalize_sim);
    app->add_option("--finetune-steps", finetune_steps);
    app->add_option("--finetune-lr", finetune_lr);
  }

  void add_grounding(CLI::App* app) {
    app->add_option("--t", t, "IoU threshold in percent");
    app->add_option("--th-sim", th_sim, "Similarity threshold (default 10)");
    app->add_option("--stride", stride, "Pixels per grid cell");
    app->add_option("--connectivity", connectivity, "4 or 8");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c;
    if (!config_path.empty()) c = load_config(config_path);
    json j = json::object();
    const auto set = [&j](const char* key, const auto& v) {
      if (v) j[key] = *v;
    };
    set("mode", mode);
    set("negatives", negatives);
    set("corpus", corpus);
    set("scenes", scenes);
    set("synonyms", synonyms);
    set("categories", categories);
    set("base_classes", base_classes);
    set("output_dir", output_dir);
    set("freeze_language", freeze_language);
    set("freeze_v2l", freeze_v2l);
    set("use_prompt", use_prompt);
    set("normalize_sim", normalize_sim);
    set("steps", steps);
    set("batch", batch);
    set("finetune_steps", finetune_steps);
    set("connectivity", connectivity);
    set("lr", lr);
    set("finetune_lr", finetune_lr);
    set("t", t);
    set("th_sim", th_sim);
    set("stride", stride);
    set("eval_fraction", eval_fraction);
    set("seed", seed);
    if (ks) {
      std::vector<int> values;
      std::stringstream ss(*ks);
      for (std::string item; std::getline(ss, item, ',');) {
        values.push_back(std::stoi(item));
      }
      j["ks"] = values;
    }
    apply_config_json(c, j);
    return c;
  }
};

class Output {
 public:
  void add(CLI::App* app) {
    app->add_option("--out", path_, "Write output here instead of stdout");
  }

  std::ostream& stream() {
    if (path_.empty()) return std::cout;
    if (!file_.is_open()) {
      file_.open(path_);
      if (!file_) throw Error("cannot write " + path_);
    }
    return file_;
  }

  void emit(const json& j) { stream() << j.dump(2) << '\n'; }

 private:
  std::string path_;
  std::ofstream file_;
};

struct Loaded {
  std::vector<TaggedCaption> corpus;
  std::vector<SceneGrid> scenes;
  Vocabulary vocab;
  AdjNounStats stats;
  CategoryLists categories;
};

std::set<std::string> read_base_names(const ExperimentConfig& c,
                                      const std::vector<SynonymEntry>& syn) {
  std::set<std::string> names;
  if (c.base_classes.empty()) {
    for (const auto& e : syn) names.insert(e.name);
    return names;
  }
  std::ifstream in(c.base_classes);
  if (!in) throw Error("cannot open " + c.base_classes.string());
  for (const auto& n : json::parse(in)) names.insert(n.get<std::string>());
  return names;
}

Vocabulary load_vocab(const ExperimentConfig& c) {
  if (c.synonyms.empty()) throw Error("--synonyms is required");
  const auto syn = load_synonyms(c.synonyms);
  return build_vocabulary(syn, read_base_names(c, syn));
}

Loaded load_for_eval(const ExperimentConfig& c, bool need_scenes) {
  Loaded l;
  l.vocab = load_vocab(c);
  if (c.corpus.empty()) throw Error("--corpus is required");
  l.corpus = load_corpus(c.corpus);
  if (need_scenes) {
    if (c.scenes.empty()) throw Error("--scenes is required");
    l.scenes = load_scenes(c.scenes);
  }
  if (!c.categories.empty()) l.categories = load_category_lists(c.categories);
  l.stats = compute_adj_noun_stats(l.corpus, l.vocab);
  return l;
}

json with_provenance(json j, const ExperimentConfig& c) {
  j["provenance"] = provenance(c);
  return j;
}

PhraseGroundingConfig grounding_config(const ExperimentConfig& c) {
  PhraseGroundingConfig pg;
  pg.mode = c.mode;
  pg.t = c.t;
  pg.th_sim = c.th_sim;
  pg.ground.stride = c.stride;
  pg.ground.connectivity = c.connectivity;
  pg.seed = c.seed;
  return pg;
}

json adjective_json(const AdjectiveEdge& e, const TaggedCaption& c,
                    const Vocabulary& vocab) {
  json j = {{"adj_index", e.adj_index},
            {"noun_index", e.noun_index},
            {"adjective", c.tokens[e.adj_index].text},
            {"noun", c.tokens[e.noun_index].text}};
  j["class"] = e.class_index ? json(vocab.classes()[*e.class_index].name)
                             : json(nullptr);
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctxalign: context-enhanced region-word alignment"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string());

  ConfigFlags flags;
  Output out;

  // build-vocab ------------------------------------------------------------
  auto* build_vocab = app.add_subcommand(
      "build-vocab", "Resolve synonyms and report adjective statistics");
  std::string category_filter;
  int min_count = kDefaultMinAdjCount;
  build_vocab->add_option("--synonyms", flags.synonyms)->required();
  build_vocab->add_option("--base-classes", flags.base_classes);
  build_vocab->add_option("--corpus", flags.corpus);
  build_vocab->add_option("--categories", flags.categories);
  build_vocab->add_option("--category", category_filter,
                          "color | age | size | quantity | property");
  build_vocab->add_option("--min-count", min_count);
  out.add(build_vocab);

  // extract-context --------------------------------------------------------
  auto* extract = app.add_subcommand(
      "extract-context", "List amod edges and phrases, or remove context");
  std::string remove_kind;
  flags.add_data(extract);
  extract->add_option("--remove", remove_kind,
                      "adj | pp | vp: emit the corpus with this context removed");
  out.add(extract);

  // gen-negatives ----------------------------------------------------------
  auto* gen_neg = app.add_subcommand("gen-negatives", "Emit negative captions");
  std::string neg_mode = "adj";
  bool frequency_weighted = false;
  std::uint64_t neg_seed = 0;
  gen_neg->add_option("--corpus", flags.corpus)->required();
  gen_neg->add_option("--synonyms", flags.synonyms)->required();
  gen_neg->add_option("--base-classes", flags.base_classes);
  gen_neg->add_option("--mode", neg_mode, "adj | noun | adj+noun | random-adj");
  gen_neg->add_option("--seed", neg_seed);
  gen_neg->add_flag("--frequency-weighted", frequency_weighted);
  out.add(gen_neg);

  // gen-synthetic ----------------------------------------------------------
  auto* gen_syn = app.add_subcommand("gen-synthetic", "Write planted data");
  SyntheticSpec spec;
  std::string syn_dir;
  std::uint64_t syn_seed = 0;
  gen_syn->add_option("--out-dir", syn_dir)->required();
  gen_syn->add_option("--seed", syn_seed);
  gen_syn->add_option("--classes", spec.n_classes);
  gen_syn->add_option("--attributes", spec.n_attributes);
  gen_syn->add_option("--scenes", spec.n_scenes);
  gen_syn->add_option("--grid-h", spec.grid_h);
  gen_syn->add_option("--grid-w", spec.grid_w);
  gen_syn->add_option("--feature-dim", spec.feature_dim);
  gen_syn->add_option("--noise-sigma", spec.noise_sigma);
  gen_syn->add_option("--attribute-effect", spec.attribute_effect);
  gen_syn->add_option("--min-objects", spec.min_objects);
  gen_syn->add_option("--max-objects", spec.max_objects);
  gen_syn->add_option("--attributes-per-class", spec.attributes_per_class);
  gen_syn->add_option("--base", spec.n_base);
  gen_syn->add_option("--class-similarity", spec.class_similarity);
  out.add(gen_syn);

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Pretrain the alignment model");
  std::string out_checkpoint, log_path;
  flags.add_data(train);
  flags.add_model(train);
  flags.add_train(train);
  train->add_option("--out-checkpoint", out_checkpoint)->required();
  train->add_option("--log", log_path, "Training log CSV");
  out.add(train);

  // eval-grounding / eval-retrieval / probe-attributes / classify -----------
  std::string checkpoint;
  auto* eval_grounding =
      app.add_subcommand("eval-grounding", "Unsupervised phrase grounding AP@t");
  auto* eval_retrieval =
      app.add_subcommand("eval-retrieval", "Text-to-region retrieval P@k / R@k");
  auto* probe = app.add_subcommand("probe-attributes",
                                   "Phrase grounding under caption edits");
  auto* classify =
      app.add_subcommand("classify", "Open-vocabulary region classification");
  for (auto* sub : {eval_grounding, eval_retrieval, probe, classify}) {
    sub->add_option("--checkpoint", checkpoint)->required();
    flags.add_data(sub);
    flags.add_model(sub);
    out.add(sub);
  }
  for (auto* sub : {eval_grounding, probe}) flags.add_grounding(sub);
  eval_retrieval->add_option("--ks", flags.ks, "Comma-separated k values");
  std::string class_set = "union";
  classify->add_option("--classes", class_set, "base | target | union");

  // ablate-context / run ---------------------------------------------------
  auto* ablate = app.add_subcommand("ablate-context",
                                    "Pretrain on context-removed corpora");
  std::string kinds_arg = "adj";
  std::string modes_arg = "context-free,contextualized";
  auto* run = app.add_subcommand("run", "Full pipeline into a run directory");
  for (auto* sub : {ablate, run}) {
    flags.add_data(sub);
    flags.add_model(sub);
    flags.add_train(sub);
    flags.add_grounding(sub);
    sub->add_option("--ks", flags.ks);
    sub->add_option("--eval-fraction", flags.eval_fraction);
    out.add(sub);
  }
  run->add_option("--output-dir", flags.output_dir);
  ablate->add_option("--kinds", kinds_arg, "Comma-separated: adj, pp, vp");
  ablate->add_option("--modes", modes_arg, "Comma-separated grounding modes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*build_vocab) {
      const ExperimentConfig c = flags.resolve();
      const Vocabulary vocab = load_vocab(c);
      const auto base = vocab.base_names();
      json classes = json::array();
      for (int k = 0; k < vocab.num_classes(); ++k) {
        const auto& cls = vocab.classes()[k];
        classes.push_back(
            {{"name", cls.name},
             {"base", std::find(base.begin(), base.end(), cls.name) != base.end()},
             {"terms", vocab.terms_of(k)}});
      }
      json j = {{"classes", classes},
                {"n_terms", vocab.term_index().size()},
                {"max_term_tokens", vocab.max_term_tokens()}};
      if (!c.corpus.empty()) {
        const auto corpus = load_corpus(c.corpus);
        const auto stats = compute_adj_noun_stats(corpus, vocab);
        json pairs = json::array();
        for (const auto& [key, n] : stats.counts) {
          pairs.push_back({{"noun", key.first}, {"adj", key.second}, {"count", n}});
        }
        j["adj_noun_counts"] = pairs;
        j["per_noun_adjectives"] = stats.per_noun_adjs;
        if (!category_filter.empty()) {
          const CategoryLists lists = c.categories.empty()
                                          ? CategoryLists{}
                                          : load_category_lists(c.categories);
          j["category"] = category_filter;
          j["filtered_adjectives"] = filter_adjectives_by_category(
              stats, parse_adj_category(category_filter), lists, min_count);
        }
      }
      out.emit(j);
    } else if (*extract) {
      const ExperimentConfig c = flags.resolve();
      const Vocabulary vocab = load_vocab(c);
      const auto corpus = load_corpus(c.corpus);
      auto& os = out.stream();
      if (!remove_kind.empty()) {
        const ContextKind kind = parse_context_kind(remove_kind);
        for (const auto& caption : corpus) {
          os << caption_to_json(remove_context(caption, kind, vocab)) << '\n';
        }
      } else {
        for (const auto& caption : corpus) {
          json adjs = json::array(), phrases = json::array();
          for (const auto& e : extract_adjectives(caption, vocab)) {
            adjs.push_back(adjective_json(e, caption, vocab));
          }
          for (const auto& p : extract_phrases(caption)) {
            phrases.push_back({{"kind", p.kind == PhraseKind::kPP ? "PP" : "VP"},
                               {"begin", p.begin},
                               {"end", p.end}});
          }
          os << json{{"caption_id", caption.caption_id},
                     {"adjectives", adjs},
                     {"phrases", phrases}}
                    .dump()
             << '\n';
        }
      }
    } else if (*gen_neg) {
      const ExperimentConfig c = flags.resolve();
      const Vocabulary vocab = load_vocab(c);
      const auto corpus = load_corpus(c.corpus);
      const auto stats = compute_adj_noun_stats(corpus, vocab);
      SamplerOptions options;
      options.frequency_weighted = frequency_weighted;
      auto& os = out.stream();
      for (const auto& sample :
           build_negative_batch(corpus, parse_negative_mode(neg_mode), stats,
                                vocab, neg_seed, options)) {
        os << negative_to_json(sample) << '\n';
      }
    } else if (*gen_syn) {
      const SyntheticData data = generate_synthetic(spec, syn_seed);
      write_synthetic(data, syn_dir);
      out.emit({{"out_dir", syn_dir},
                {"seed", syn_seed},
                {"n_scenes", data.scenes.size()},
                {"n_captions", data.corpus.size()},
                {"classes", data.synonyms.size()},
                {"base_classes", data.base_names},
                {"attributes", data.attributes},
                {"class_attributes", data.class_attributes},
                {"version", version_string()}});
    } else if (*train) {
      const ExperimentConfig c = flags.resolve();
      const Loaded l = load_for_eval(c, true);
      TrainConfig tc;
      tc.mode = c.mode;
      tc.negatives = c.negatives;
      tc.freeze = c.freeze;
      tc.steps = c.steps;
      tc.batch = c.batch;
      tc.lr = c.lr;
      tc.seed = c.seed;
      tc.normalize_sim = c.normalize_sim;
      EncoderStack init = create_encoder(
          c.dims, build_token_inventory(l.corpus, l.vocab), c.seed);
      TrainResult result =
          pretrain(l.corpus, l.scenes, std::move(init), l.vocab, l.stats, tc);
      save_checkpoint(out_checkpoint, result.encoder);
      if (!log_path.empty()) write_training_log(log_path, result.log);
      json j = {{"checkpoint", out_checkpoint}, {"steps", result.log.size()}};
      if (!result.log.empty()) {
        j["final"] = {{"loss_total", result.log.back().loss_total},
                      {"pos_score_mean", result.log.back().pos_score_mean},
                      {"neg_score_mean", result.log.back().neg_score_mean}};
      }
      out.emit(with_provenance(j, c));
    } else if (*eval_grounding || *probe) {
      const ExperimentConfig c = flags.resolve();
      const Loaded l = load_for_eval(c, true);
      const EncoderStack enc = load_checkpoint(checkpoint);
      const PhraseGroundingConfig pg = grounding_config(c);
      const json j =
          *eval_grounding
              ? to_json(phrase_grounding_ap(l.corpus, l.scenes, enc, l.vocab,
                                            l.stats, ProbeScenario::kAsIs, pg))
              : to_json(attribute_probe(l.corpus, l.scenes, enc, l.vocab,
                                        l.stats, pg));
      out.emit(with_provenance(j, c));
    } else if (*eval_retrieval) {
      const ExperimentConfig c = flags.resolve();
      const Loaded l = load_for_eval(c, true);
      const EncoderStack enc = load_checkpoint(checkpoint);
      const auto gallery = build_gallery(l.scenes, enc);
      const RetrievalReport report = retrieval_eval(
          gallery_queries(gallery, enc, c.mode, l.categories.color), gallery,
          c.ks);
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
      out.emit(with_provenance(to_json(report), c));
    } else if (*classify) {
      const ExperimentConfig c = flags.resolve();
      const Vocabulary vocab = load_vocab(c);
      if (c.scenes.empty()) throw Error("--scenes is required");
      const auto scenes = load_scenes(c.scenes);
      const EncoderStack enc = load_checkpoint(checkpoint);
      out.emit(with_provenance(
          to_json(classify_regions(scenes, enc, vocab,
                                   parse_class_set(class_set), c.mode,
                                   c.use_prompt)),
          c));
    } else if (*ablate) {
      const ExperimentConfig c = flags.resolve();
      const ExperimentData data = load_experiment_data(c);
      std::vector<ContextKind> kinds;
      std::stringstream ks(kinds_arg);
      for (std::string item; std::getline(ks, item, ',');) {
        if (!item.empty()) kinds.push_back(parse_context_kind(item));
      }
      std::vector<GroundingMode> modes;
      std::stringstream ms(modes_arg);
      for (std::string item; std::getline(ms, item, ',');) {
        if (!item.empty()) modes.push_back(parse_grounding_mode(item));
      }
      out.emit(ablate_context(c, data, kinds, modes));
    } else if (*run) {
      const ExperimentConfig c = flags.resolve();
      const auto dir = run_experiment(c);
      out.emit(with_provenance({{"run_dir", dir.string()}}, c));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
