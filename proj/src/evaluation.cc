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

#include "ctxalign/evaluation.h"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace ctxalign {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<Box> boxes_from_similarity(const MatrixXd& sim_map, double th_sim,
                                       const GroundWordOptions& options) {
  const int h = static_cast<int>(sim_map.rows());
  const int w = static_cast<int>(sim_map.cols());
  std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
  std::vector<Box> boxes;
  std::vector<std::pair<int, int>> offsets = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  if (options.connectivity == Connectivity::kEight) {
    offsets.insert(offsets.end(), {{-1, -1}, {-1, 1}, {1, -1}, {1, 1}});
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (label[r * w + c] >= 0 || sim_map(r, c) < th_sim) continue;
      const int id = static_cast<int>(boxes.size());
      int r0 = r, r1 = r, c0 = c, c1 = c;
      double best = sim_map(r, c);
      std::vector<std::pair<int, int>> stack{{r, c}};
      label[r * w + c] = id;
      while (!stack.empty()) {
        const auto [cr, cc] = stack.back();
        stack.pop_back();
        r0 = std::min(r0, cr);
        r1 = std::max(r1, cr);
        c0 = std::min(c0, cc);
        c1 = std::max(c1, cc);
        best = std::max(best, sim_map(cr, cc));
        for (const auto& [dr, dc] : offsets) {
          const int nr = cr + dr, nc = cc + dc;
          if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
          if (label[nr * w + nc] >= 0 || sim_map(nr, nc) < th_sim) continue;
          label[nr * w + nc] = id;
          stack.emplace_back(nr, nc);
        }
      }
      const double s = options.stride;
      boxes.push_back({c0 * s, r0 * s, (c1 + 1) * s, (r1 + 1) * s, best});
    }
  }
  return boxes;
}

std::vector<Box> ground_word(const MatrixXd& region_emb, int height_cells,
                             int width_cells, const VectorXd& word_vec,
                             double th_sim, const GroundWordOptions& options) {
  if (region_emb.rows() != static_cast<Eigen::Index>(height_cells) * width_cells) {
    throw Error("region embedding rows do not match the grid");
  }
  const VectorXd sim = region_emb * word_vec;
  MatrixXd sim_map(height_cells, width_cells);
  for (int r = 0; r < height_cells; ++r) {
    for (int c = 0; c < width_cells; ++c) sim_map(r, c) = sim(r * width_cells + c);
  }
  return boxes_from_similarity(sim_map, th_sim, options);
}

// ---------------------------------------------------------------------------
// AP

double average_precision(const std::vector<bool>& ranked_hits, int n_gt) {
  if (n_gt <= 0) return 0.0;
  const int n = static_cast<int>(ranked_hits.size());
  std::vector<double> precision(n);
  int hits = 0;
  for (int k = 0; k < n; ++k) {
    hits += ranked_hits[k] ? 1 : 0;
    precision[k] = static_cast<double>(hits) / (k + 1);
  }
  // Interpolate: precision at rank k is the best precision at any rank >= k.
  for (int k = n - 2; k >= 0; --k) {
    precision[k] = std::max(precision[k], precision[k + 1]);
  }
  double ap = 0.0;
  for (int k = 0; k < n; ++k) {
    if (ranked_hits[k]) ap += precision[k];
  }
  return ap / n_gt;
}

namespace {

// AP of detections against GT boxes, all of one class.
double class_ap(std::vector<const Detection*> dets,
                const std::vector<const GroundTruthBox*>& gts,
                double threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection* a, const Detection* b) {
                     return a->box.score > b->box.score;
                   });
  std::vector<bool> used(gts.size(), false);
  std::vector<bool> hits;
  hits.reserve(dets.size());
  for (const Detection* d : dets) {
    int best = -1;
    double best_iou = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g]->image_id != d->image_id) continue;
      const double o = iou(d->box, gts[g]->box);
      if (o > best_iou) {
        best_iou = o;
        best = static_cast<int>(g);
      }
    }
    const bool hit = best >= 0 && best_iou >= threshold;
    if (hit) used[best] = true;
    hits.push_back(hit);
  }
  return average_precision(hits, static_cast<int>(gts.size()));
}

}  // namespace

ApReport evaluate_detections(const std::vector<Detection>& detections,
                             const std::vector<GroundTruthBox>& gts,
                             double t_percent) {
  if (gts.empty()) throw Error("AP evaluation needs at least one GT box");
  const double threshold = t_percent / 100.0;
  std::map<std::string, std::vector<const GroundTruthBox*>> gt_by_class;
  for (const auto& g : gts) gt_by_class[g.cls].push_back(&g);
  std::map<std::string, std::vector<const Detection*>> det_by_class;
  for (const auto& d : detections) det_by_class[d.cls].push_back(&d);

  ApReport report;
  report.n_predictions = static_cast<int>(detections.size());
  report.n_gt = static_cast<int>(gts.size());
  double sum = 0;
  for (const auto& [cls, class_gts] : gt_by_class) {
    const double ap = class_ap(det_by_class[cls], class_gts, threshold);
    report.per_class_ap[cls] = ap;
    sum += ap;
  }
  report.mean_ap = sum / static_cast<double>(gt_by_class.size());

  // Secondary aggregation: one AP per (caption, class) with detections.
  std::map<std::pair<std::string, std::string>, std::vector<const Detection*>>
      by_caption;
  for (const auto& d : detections) by_caption[{d.caption_id, d.cls}].push_back(&d);
  double caption_sum = 0;
  int caption_groups = 0;
  for (const auto& [key, dets] : by_caption) {
    std::vector<const GroundTruthBox*> own;
    for (const GroundTruthBox* g : gt_by_class[key.second]) {
      if (g->image_id == dets.front()->image_id) own.push_back(g);
    }
    if (own.empty()) continue;
    caption_sum += class_ap(dets, own, threshold);
    ++caption_groups;
  }
  if (caption_groups > 0) report.per_caption_mean_ap = caption_sum / caption_groups;
  return report;
}

std::vector<GroundTruthBox> gt_boxes(const SceneGrid& scene, double stride) {
  std::vector<GroundTruthBox> out;
  for (const auto& obj : gt_objects(scene)) {
    out.push_back({scene.image_id, obj.cls,
                   Box{obj.col0 * stride, obj.row0 * stride, obj.col1 * stride,
                       obj.row1 * stride, 1.0}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Probe

std::string_view to_string(ProbeScenario scenario) {
  switch (scenario) {
    case ProbeScenario::kAsIs: return "as_is";
    case ProbeScenario::kDropAdj: return "drop";
    case ProbeScenario::kPlausibleChange: return "plausible";
    case ProbeScenario::kRandomChange: return "random";
  }
  return "as_is";
}

TaggedCaption apply_scenario(const TaggedCaption& caption,
                             ProbeScenario scenario, const AdjNounStats& stats,
                             const Vocabulary& vocab, std::uint64_t seed) {
  switch (scenario) {
    case ProbeScenario::kAsIs:
      return caption;
    case ProbeScenario::kDropAdj: {
      std::vector<bool> remove(caption.tokens.size(), false);
      bool any = false;
      for (const auto& edge : extract_adjectives(caption, vocab)) {
        if (!edge.class_index) continue;
        remove[edge.adj_index] = true;
        any = true;
      }
      return any ? delete_tokens(caption, remove) : caption;
    }
    case ProbeScenario::kPlausibleChange: {
      auto s = gen_adj_negative(caption, stats, vocab, seed);
      return s ? s->caption : caption;
    }
    case ProbeScenario::kRandomChange: {
      auto s = gen_random_adj_negative(caption, stats, vocab, seed);
      return s ? s->caption : caption;
    }
  }
  return caption;
}

ApReport phrase_grounding_ap(const std::vector<TaggedCaption>& corpus,
                             const std::vector<SceneGrid>& scenes,
                             const EncoderStack& enc, const Vocabulary& vocab,
                             const AdjNounStats& stats, ProbeScenario scenario,
                             const PhraseGroundingConfig& config) {
  std::unordered_map<std::string, int> scene_index;
  for (int i = 0; i < static_cast<int>(scenes.size()); ++i) {
    scene_index.emplace(scenes[i].image_id, i);
  }
  std::unordered_map<int, MatrixXd> region_cache;
  std::vector<Detection> detections;
  std::set<std::pair<std::string, std::string>> mentioned;  // (image, class)
  for (const auto& original : corpus) {
    auto it = scene_index.find(original.image_id);
    if (it == scene_index.end()) continue;
    const SceneGrid& scene = scenes[it->second];
    const TaggedCaption caption =
        apply_scenario(original, scenario, stats, vocab, config.seed);
    const auto matches = match_terms(caption, vocab);
    if (matches.empty()) continue;
    auto cached = region_cache.find(it->second);
    if (cached == region_cache.end()) {
      cached = region_cache.emplace(it->second, embed_regions(scene, enc)).first;
    }
    const MatrixXd words = embed_words(caption, enc, config.mode);
    for (const auto& m : matches) {
      const std::string& cls = vocab.classes()[m.class_index].name;
      mentioned.emplace(scene.image_id, cls);
      for (const Box& b :
           ground_word(cached->second, scene.height_cells, scene.width_cells,
                       words.row(m.head).transpose(), config.th_sim,
                       config.ground)) {
        detections.push_back({scene.image_id, cls, original.caption_id, b});
      }
    }
  }
  std::vector<GroundTruthBox> gts;
  for (const auto& scene : scenes) {
    for (auto& g : gt_boxes(scene, config.ground.stride)) {
      if (mentioned.count({g.image_id, g.cls})) gts.push_back(std::move(g));
    }
  }
  return evaluate_detections(detections, gts, config.t);
}

ProbeReport attribute_probe(const std::vector<TaggedCaption>& corpus,
                            const std::vector<SceneGrid>& scenes,
                            const EncoderStack& enc, const Vocabulary& vocab,
                            const AdjNounStats& stats,
                            const PhraseGroundingConfig& config) {
  const auto run = [&](ProbeScenario s) {
    return phrase_grounding_ap(corpus, scenes, enc, vocab, stats, s, config)
        .mean_ap;
  };
  ProbeReport r;
  r.as_is = run(ProbeScenario::kAsIs);
  r.drop = run(ProbeScenario::kDropAdj);
  r.plausible = run(ProbeScenario::kPlausibleChange);
  r.random = run(ProbeScenario::kRandomChange);
  return r;
}

// ---------------------------------------------------------------------------
// Retrieval

RetrievalQuery make_retrieval_query(const std::string& attribute,
                                    const std::string& object,
                                    const EncoderStack& enc,
                                    GroundingMode mode) {
  std::vector<std::string> words{attribute};
  std::istringstream in(object);
  std::string w;
  while (in >> w) words.push_back(w);
  RetrievalQuery q{attribute, object, VectorXd::Zero(enc.dims.d)};
  if (mode == GroundingMode::kContextFree) {
    for (const auto& t : words) {
      q.embedding += enc.params.word_table.row(enc.token_id(t)).transpose();
    }
    q.embedding /= static_cast<double>(words.size());
  } else {
    q.embedding =
        embed_tokens_contextualized(words, enc).colwise().mean().transpose();
  }
  return q;
}

std::vector<GalleryItem> build_gallery(const std::vector<SceneGrid>& scenes,
                                       const EncoderStack& enc) {
  std::vector<GalleryItem> gallery;
  for (const auto& scene : scenes) {
    for (const auto& obj : gt_objects(scene)) {
      MatrixXd pooled = MatrixXd::Zero(1, scene.feature_dim());
      for (int cell : obj.cells) pooled += scene.features.row(cell);
      pooled /= static_cast<double>(obj.cells.size());
      gallery.push_back({embed_region_features(pooled, enc).row(0).transpose(),
                         obj.attr, obj.cls});
    }
  }
  return gallery;
}

std::vector<RetrievalQuery> gallery_queries(
    const std::vector<GalleryItem>& gallery, const EncoderStack& enc,
    GroundingMode mode, const std::set<std::string>& attributes) {
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& item : gallery) {
    if (attributes.empty() || attributes.count(item.attribute)) {
      pairs.emplace(item.attribute, item.object);
    }
  }
  std::vector<RetrievalQuery> queries;
  for (const auto& [attr, obj] : pairs) {
    queries.push_back(make_retrieval_query(attr, obj, enc, mode));
  }
  return queries;
}

RetrievalReport retrieval_eval(const std::vector<RetrievalQuery>& queries,
                               const std::vector<GalleryItem>& gallery,
                               const std::vector<int>& ks) {
  RetrievalReport report;
  report.n_queries = static_cast<int>(queries.size());
  report.n_gallery = static_cast<int>(gallery.size());
  const int n = report.n_gallery;
  for (int k : ks) {
    if (k <= 0) throw Error("retrieval k must be positive");
    if (k > n) {
      report.warnings.push_back("k=" + std::to_string(k) +
                                " exceeds gallery size " + std::to_string(n) +
                                "; clamped");
    }
    report.recall[k] = 0.0;
    report.precision[k] = 0.0;
  }
  if (queries.empty() || n == 0) return report;

  std::vector<int> order(n);
  for (const auto& q : queries) {
    std::vector<double> scores(n);
    for (int g = 0; g < n; ++g) scores[g] = gallery[g].embedding.dot(q.embedding);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
    for (int k : ks) {
      const int kk = std::min(k, n);
      int correct = 0;
      for (int r = 0; r < kk; ++r) {
        const GalleryItem& item = gallery[order[r]];
        if (item.attribute == q.attribute && item.object == q.object) ++correct;
      }
      report.recall[k] += correct > 0 ? 1.0 : 0.0;
      report.precision[k] += static_cast<double>(correct) / kk;
    }
  }
  for (int k : ks) {
    report.recall[k] /= report.n_queries;
    report.precision[k] /= report.n_queries;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Classification

std::string_view to_string(ClassSet set) {
  switch (set) {
    case ClassSet::kBase: return "base";
    case ClassSet::kTarget: return "target";
    case ClassSet::kUnion: return "union";
  }
  return "union";
}

ClassSet parse_class_set(std::string_view name) {
  if (name == "base") return ClassSet::kBase;
  if (name == "target") return ClassSet::kTarget;
  if (name == "union") return ClassSet::kUnion;
  throw Error("unknown class set '" + std::string(name) + "'");
}

std::vector<int> assign_regions(const MatrixXd& region_emb,
                                const MatrixXd& class_vectors,
                                const VectorXd& background) {
  const MatrixXd scores = region_emb * class_vectors.transpose();
  const VectorXd bg = region_emb * background;
  const int k = static_cast<int>(class_vectors.rows());
  std::vector<int> out(region_emb.rows());
  for (Eigen::Index i = 0; i < region_emb.rows(); ++i) {
    int best = k;
    double best_score = bg(i);
    for (int c = 0; c < k; ++c) {
      // Classes beat the background on ties; earlier classes beat later ones.
      if (scores(i, c) > best_score || (best == k && scores(i, c) == best_score)) {
        best = c;
        best_score = scores(i, c);
      }
    }
    out[i] = best;
  }
  return out;
}

ClassificationReport classify_regions(const std::vector<SceneGrid>& scenes,
                                      const EncoderStack& enc,
                                      const Vocabulary& vocab,
                                      ClassSet class_set, GroundingMode mode,
                                      bool use_prompt, PromptPooling pooling) {
  ClassificationReport report;
  report.class_set = class_set;
  for (const auto& c : vocab.classes()) {
    if (class_set == ClassSet::kUnion ||
        (class_set == ClassSet::kBase) == c.is_base) {
      report.classes.push_back(c.name);
    }
  }
  if (report.classes.empty()) throw Error("empty class set");
  const auto embs =
      build_class_embeddings(report.classes, enc, mode, use_prompt, pooling);
  MatrixXd class_vectors(embs.size(), enc.dims.d);
  for (std::size_t k = 0; k < embs.size(); ++k) {
    class_vectors.row(k) = embs[k].vector.transpose();
  }
  const VectorXd background = enc.params.background.row(0).transpose();
  const int k_classes = static_cast<int>(report.classes.size());
  std::unordered_map<std::string, int> index;
  for (int k = 0; k < k_classes; ++k) index.emplace(report.classes[k], k);

  std::vector<int> correct(k_classes, 0), total(k_classes, 0);
  int bg_correct = 0, bg_total = 0;
  for (const auto& scene : scenes) {
    const auto pred =
        assign_regions(embed_regions(scene, enc), class_vectors, background);
    for (int cell = 0; cell < scene.num_cells(); ++cell) {
      const CellLabel& label = scene.gt[cell];
      if (label.is_background()) {
        ++bg_total;
        bg_correct += pred[cell] == k_classes ? 1 : 0;
        continue;
      }
      auto it = index.find(label.cls);
      if (it == index.end()) continue;
      ++total[it->second];
      correct[it->second] += pred[cell] == it->second ? 1 : 0;
      ++report.n_cells;
    }
  }
  double base_sum = 0, target_sum = 0;
  int base_n = 0, target_n = 0;
  for (int k = 0; k < k_classes; ++k) {
    if (total[k] == 0) continue;
    const double acc = static_cast<double>(correct[k]) / total[k];
    report.per_class_accuracy[report.classes[k]] = acc;
    const bool is_base = vocab.classes()[*vocab.class_index(report.classes[k])].is_base;
    (is_base ? base_sum : target_sum) += acc;
    ++(is_base ? base_n : target_n);
  }
  if (base_n > 0) report.base_mean = base_sum / base_n;
  if (target_n > 0) report.target_mean = target_sum / target_n;
  if (base_n + target_n > 0) {
    report.all_mean = (base_sum + target_sum) / (base_n + target_n);
  }
  if (bg_total > 0) {
    report.background_accuracy = static_cast<double>(bg_correct) / bg_total;
  }
  return report;
}

}  // namespace ctxalign
