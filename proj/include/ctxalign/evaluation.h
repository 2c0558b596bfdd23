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

// Measurement protocols: unsupervised phrase grounding (AP@t), text-to-region
// retrieval (P@k / R@k), open-vocabulary region classification and the
// attribute-sensitivity probe.

#ifndef CTXALIGN_EVALUATION_H_
#define CTXALIGN_EVALUATION_H_

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ctxalign/corpus.h"
#include "ctxalign/encoder.h"
#include "ctxalign/negatives.h"
#include "ctxalign/scene.h"

namespace ctxalign {

// Half-open pixel rectangle with a confidence score.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double score = 0;

  double area() const { return (x1 - x0) * (y1 - y0); }
};

double iou(const Box& a, const Box& b);

enum class Connectivity { kFour = 4, kEight = 8 };

struct GroundWordOptions {
  double stride = 32;
  Connectivity connectivity = Connectivity::kFour;
};

// Thresholds an h x w similarity map at `th_sim`, labels connected
// components and returns one tight box per component, scored by the
// component's maximum similarity. Boxes come out in scan order.
std::vector<Box> boxes_from_similarity(const Eigen::MatrixXd& sim_map,
                                       double th_sim,
                                       const GroundWordOptions& options = {});

// `region_emb` rows are the grid cells in row-major order.
std::vector<Box> ground_word(const Eigen::MatrixXd& region_emb, int height_cells,
                             int width_cells, const Eigen::VectorXd& word_vec,
                             double th_sim,
                             const GroundWordOptions& options = {});

// ---------------------------------------------------------------------------
// AP@t

struct Detection {
  std::string image_id;
  std::string cls;
  std::string caption_id;
  Box box;
};

struct GroundTruthBox {
  std::string image_id;
  std::string cls;
  Box box;
};

// All-point interpolated AP of a ranked list of hit flags against `n_gt`.
double average_precision(const std::vector<bool>& ranked_hits, int n_gt);

struct ApReport {
  std::map<std::string, double> per_class_ap;
  double mean_ap = 0;  // macro over classes
  // Mean AP over (caption, class) groups.
  std::optional<double> per_caption_mean_ap;
  int n_predictions = 0;
  int n_gt = 0;
};

// Greedy matching by descending score (ties keep input order); a prediction
// is a hit when its best unmatched same-image GT box has IoU >= t / 100.
// Classes without GT boxes are skipped; no GT at all is an error.
ApReport evaluate_detections(const std::vector<Detection>& detections,
                             const std::vector<GroundTruthBox>& gts,
                             double t_percent);

std::vector<GroundTruthBox> gt_boxes(const SceneGrid& scene, double stride);

// ---------------------------------------------------------------------------
// Attribute probe scenarios

enum class ProbeScenario { kAsIs, kDropAdj, kPlausibleChange, kRandomChange };

std::string_view to_string(ProbeScenario scenario);

// Rewrites adjectives that modify vocabulary nouns. Captions without such an
// adjective (or without an alternative) come back unchanged.
TaggedCaption apply_scenario(const TaggedCaption& caption,
                             ProbeScenario scenario, const AdjNounStats& stats,
                             const Vocabulary& vocab, std::uint64_t seed);

struct PhraseGroundingConfig {
  GroundingMode mode = GroundingMode::kContextualized;
  double t = 30;
  double th_sim = 10;
  GroundWordOptions ground;
  std::uint64_t seed = 0;
};

// Every caption token heading a vocabulary term is grounded on the caption's
// own scene; predictions are pooled per class over all captions that mention
// the class, against the GT boxes of those images.
ApReport phrase_grounding_ap(const std::vector<TaggedCaption>& corpus,
                             const std::vector<SceneGrid>& scenes,
                             const EncoderStack& enc, const Vocabulary& vocab,
                             const AdjNounStats& stats, ProbeScenario scenario,
                             const PhraseGroundingConfig& config);

struct ProbeReport {
  double as_is = 0, drop = 0, plausible = 0, random = 0;

  double delta_drop() const { return drop - as_is; }
  double delta_plausible() const { return plausible - as_is; }
  double delta_random() const { return random - as_is; }
};

ProbeReport attribute_probe(const std::vector<TaggedCaption>& corpus,
                            const std::vector<SceneGrid>& scenes,
                            const EncoderStack& enc, const Vocabulary& vocab,
                            const AdjNounStats& stats,
                            const PhraseGroundingConfig& config);

// ---------------------------------------------------------------------------
// Text-to-region retrieval

struct RetrievalQuery {
  std::string attribute;
  std::string object;
  Eigen::VectorXd embedding;
};

struct GalleryItem {
  Eigen::VectorXd embedding;
  std::string attribute;
  std::string object;
};

// Embedding = mean of the attribute and object token rows of "<attr> <obj>".
RetrievalQuery make_retrieval_query(const std::string& attribute,
                                    const std::string& object,
                                    const EncoderStack& enc,
                                    GroundingMode mode);

// One item per GT object: mean-pooled cell features through the vision
// projection and V2L layer.
std::vector<GalleryItem> build_gallery(const std::vector<SceneGrid>& scenes,
                                       const EncoderStack& enc);

// One query per distinct (attribute, object) pair in the gallery, sorted;
// with a non-empty `attributes`, only those attributes are queried.
std::vector<RetrievalQuery> gallery_queries(
    const std::vector<GalleryItem>& gallery, const EncoderStack& enc,
    GroundingMode mode, const std::set<std::string>& attributes = {});

struct RetrievalReport {
  std::map<int, double> recall;
  std::map<int, double> precision;
  int n_queries = 0;
  int n_gallery = 0;
  std::vector<std::string> warnings;
};

// Ranks the gallery by dot product (ties by gallery index). A k larger than
// the gallery is clamped and reported in `warnings`.
RetrievalReport retrieval_eval(const std::vector<RetrievalQuery>& queries,
                               const std::vector<GalleryItem>& gallery,
                               const std::vector<int>& ks);

// ---------------------------------------------------------------------------
// Region classification

enum class ClassSet { kBase, kTarget, kUnion };

std::string_view to_string(ClassSet set);
ClassSet parse_class_set(std::string_view name);

// Index of the best class by dot product, or class_vectors.rows() for the
// background. Ties go to the earlier class; background loses ties.
std::vector<int> assign_regions(const Eigen::MatrixXd& region_emb,
                                const Eigen::MatrixXd& class_vectors,
                                const Eigen::VectorXd& background);

struct ClassificationReport {
  ClassSet class_set = ClassSet::kUnion;
  std::vector<std::string> classes;
  std::map<std::string, double> per_class_accuracy;
  std::optional<double> base_mean;
  std::optional<double> target_mean;
  std::optional<double> all_mean;
  std::optional<double> background_accuracy;
  int n_cells = 0;
};

ClassificationReport classify_regions(const std::vector<SceneGrid>& scenes,
                                      const EncoderStack& enc,
                                      const Vocabulary& vocab,
                                      ClassSet class_set, GroundingMode mode,
                                      bool use_prompt,
                                      PromptPooling pooling =
                                          PromptPooling::kAverage);

}  // namespace ctxalign

#endif  // CTXALIGN_EVALUATION_H_
