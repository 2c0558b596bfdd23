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

#include "ctxalign/training.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <unordered_map>

namespace ctxalign {

using Eigen::MatrixXd;

namespace {

struct WordForward {
  std::vector<int> ids;
  MatrixXd raw;  // e- or f-space rows before optional normalization
  MatrixXd emb;  // rows entering the similarity
  ContextCache cache;
};

struct RegionForward {
  MatrixXd z;    // vision_proj output
  MatrixXd raw;  // v2l output
  MatrixXd emb;
};

struct BatchState {
  std::vector<RegionForward> regions;
  std::vector<WordForward> words;  // B captions then N negatives
  std::vector<std::vector<GroundingResult<double>>> results;
  BatchLoss loss;
  MatrixXd d_scores;  // d total / d per_pair_scores
};

WordForward forward_words(const TaggedCaption& caption, const EncoderStack& enc,
                          const AlignmentOptions& options, bool keep_cache) {
  WordForward w;
  w.ids = token_ids_of(caption, enc);
  const int n = static_cast<int>(w.ids.size());
  MatrixXd x0(n, enc.dims.d);
  for (int j = 0; j < n; ++j) x0.row(j) = enc.params.word_table.row(w.ids[j]);
  if (options.mode == GroundingMode::kContextFree) {
    w.raw = std::move(x0);
  } else {
    x0 += positional_encoding(n, enc.dims.d, enc.dims.pos_scale);
    w.raw = contextualize(x0, enc.params, keep_cache ? &w.cache : nullptr);
  }
  w.emb = options.normalize_sim ? normalize_rows(w.raw) : w.raw;
  return w;
}

RegionForward forward_regions(const SceneGrid& scene, const EncoderStack& enc,
                              const AlignmentOptions& options) {
  if (scene.feature_dim() != enc.dims.d_v) {
    throw Error("scene '" + scene.image_id + "' feature width " +
                std::to_string(scene.feature_dim()) +
                " does not match the vision projection");
  }
  const EncoderParams& p = enc.params;
  RegionForward r;
  r.z = scene.features * p.vision_w;
  r.z.rowwise() += p.vision_b.row(0);
  r.raw = r.z * p.v2l_w;
  r.raw.rowwise() += p.v2l_b.row(0);
  r.emb = options.normalize_sim ? normalize_rows(r.raw) : r.raw;
  return r;
}

// Backward of row normalization y = x / |x|.
MatrixXd normalize_rows_backward(const MatrixXd& x, const MatrixXd& y,
                                 const MatrixXd& dy) {
  MatrixXd dx = MatrixXd::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double norm = x.row(i).norm();
    if (norm == 0) continue;
    dx.row(i) = (dy.row(i) - y.row(i) * y.row(i).dot(dy.row(i))) / norm;
  }
  return dx;
}

// The grounding losses and their gradient with respect to the score matrix.
BatchLoss reduce_scores(const MatrixXd& scores, int batch, MatrixXd* d_scores) {
  BatchLoss loss;
  loss.per_pair_scores = scores;
  const Eigen::Index cols = scores.cols();
  if (d_scores) *d_scores = MatrixXd::Zero(scores.rows(), cols);
  std::vector<double> others;
  for (int i = 0; i < batch; ++i) {
    others.clear();
    for (Eigen::Index k = 0; k < cols; ++k) {
      if (k != i) others.push_back(scores(i, k));
    }
    const double li = loss_image_side<double>(scores(i, i), others);
    loss.loss_image_side += li;
    if (d_scores) {
      // softmax over the row minus the one-hot positive
      const double lse = li + scores(i, i);
      for (Eigen::Index k = 0; k < cols; ++k) {
        (*d_scores)(i, k) += std::exp(scores(i, k) - lse);
      }
      (*d_scores)(i, i) -= 1.0;
    }
  }
  for (int i = 0; i < batch; ++i) {
    others.clear();
    for (int k = 0; k < batch; ++k) {
      if (k != i) others.push_back(scores(k, i));
    }
    const double lc = loss_caption_side<double>(scores(i, i), others);
    loss.loss_caption_side += lc;
    if (d_scores) {
      const double lse = lc + scores(i, i);
      for (int k = 0; k < batch; ++k) {
        (*d_scores)(k, i) += std::exp(scores(k, i) - lse);
      }
      (*d_scores)(i, i) -= 1.0;
    }
  }
  loss.total = (loss.loss_image_side + loss.loss_caption_side) / batch;
  if (d_scores) *d_scores /= static_cast<double>(batch);
  return loss;
}

BatchState run_forward(const std::vector<SceneGrid>& images,
                       const std::vector<TaggedCaption>& captions,
                       const std::vector<NegativeSample>& negatives,
                       const EncoderStack& enc, const AlignmentOptions& options,
                       bool for_backward) {
  if (images.size() != captions.size()) {
    throw Error("batch has " + std::to_string(images.size()) + " images but " +
                std::to_string(captions.size()) + " captions");
  }
  if (images.empty()) throw Error("empty batch");
  const int batch = static_cast<int>(images.size());
  BatchState st;
  const bool keep_cache = for_backward && !enc.freeze.language_frozen;
  for (const auto& img : images) {
    st.regions.push_back(forward_regions(img, enc, options));
  }
  for (const auto& c : captions) {
    st.words.push_back(forward_words(c, enc, options, keep_cache));
  }
  for (const auto& n : negatives) {
    st.words.push_back(forward_words(n.caption, enc, options, keep_cache));
  }
  const int cols = static_cast<int>(st.words.size());
  MatrixXd scores(batch, cols);
  st.results.assign(batch, {});
  for (int i = 0; i < batch; ++i) {
    st.results[i].reserve(cols);
    for (int k = 0; k < cols; ++k) {
      st.results[i].push_back(
          grounding_score(st.regions[i].emb, st.words[k].emb));
      scores(i, k) = st.results[i].back().score;
    }
  }
  if (!scores.allFinite()) throw Error("non-finite grounding score");
  st.loss = reduce_scores(scores, batch, for_backward ? &st.d_scores : nullptr);
  return st;
}

}  // namespace

BatchLoss batch_forward(const std::vector<SceneGrid>& images,
                        const std::vector<TaggedCaption>& captions,
                        const std::vector<NegativeSample>& negatives,
                        const EncoderStack& enc,
                        const AlignmentOptions& options) {
  return run_forward(images, captions, negatives, enc, options, false).loss;
}

BatchGradients batch_backward(const std::vector<SceneGrid>& images,
                              const std::vector<TaggedCaption>& captions,
                              const std::vector<NegativeSample>& negatives,
                              const EncoderStack& enc,
                              const AlignmentOptions& options) {
  BatchState st = run_forward(images, captions, negatives, enc, options, true);
  const int batch = static_cast<int>(images.size());
  const int cols = static_cast<int>(st.words.size());

  std::vector<MatrixXd> d_region(batch);
  for (int i = 0; i < batch; ++i) {
    d_region[i] = MatrixXd::Zero(st.regions[i].emb.rows(), enc.dims.d);
  }
  std::vector<MatrixXd> d_words(cols);
  for (int k = 0; k < cols; ++k) {
    d_words[k] = MatrixXd::Zero(st.words[k].emb.rows(), enc.dims.d);
  }
  for (int i = 0; i < batch; ++i) {
    for (int k = 0; k < cols; ++k) {
      const double ds = st.d_scores(i, k);
      if (ds == 0) continue;
      const MatrixXd d_sim = score_grad_wrt_sim(st.results[i][k]) * ds;
      d_region[i] += d_sim * st.words[k].emb;
      d_words[k] += d_sim.transpose() * st.regions[i].emb;
    }
  }

  BatchGradients out;
  out.loss = st.loss;
  out.grads = enc.params.zeros_like();
  EncoderParams& g = out.grads;
  const EncoderParams& p = enc.params;

  for (int i = 0; i < batch; ++i) {
    const RegionForward& r = st.regions[i];
    MatrixXd d_raw = options.normalize_sim
                         ? normalize_rows_backward(r.raw, r.emb, d_region[i])
                         : d_region[i];
    if (!enc.freeze.v2l_frozen) {
      g.v2l_w += r.z.transpose() * d_raw;
      g.v2l_b.row(0) += d_raw.colwise().sum();
    }
    const MatrixXd dz = d_raw * p.v2l_w.transpose();
    g.vision_w += images[i].features.transpose() * dz;
    g.vision_b.row(0) += dz.colwise().sum();
  }

  if (!enc.freeze.language_frozen) {
    for (int k = 0; k < cols; ++k) {
      const WordForward& w = st.words[k];
      MatrixXd d_raw = options.normalize_sim
                           ? normalize_rows_backward(w.raw, w.emb, d_words[k])
                           : d_words[k];
      MatrixXd dx0 = options.mode == GroundingMode::kContextFree
                         ? d_raw
                         : contextualize_backward(w.cache, p, d_raw, g);
      for (int j = 0; j < static_cast<int>(w.ids.size()); ++j) {
        g.word_table.row(w.ids[j]) += dx0.row(j);
      }
    }
  }

  g.for_each_block([](const std::string& name, const MatrixXd& block,
                      BlockGroup) {
    if (!block.allFinite()) {
      throw Error("non-finite gradient in block " + name);
    }
  });
  return out;
}

double learning_rate_at(const TrainConfig& config, int step) {
  double lr = config.lr;
  for (double frac : config.decay_at) {
    if (step >= static_cast<int>(std::floor(frac * config.steps))) {
      lr *= config.decay_factor;
    }
  }
  return lr;
}

TrainResult pretrain(const std::vector<TaggedCaption>& corpus,
                     const std::vector<SceneGrid>& scenes, EncoderStack init,
                     const Vocabulary& vocab, const AdjNounStats& stats,
                     const TrainConfig& config) {
  std::unordered_map<std::string, int> scene_index;
  for (int i = 0; i < static_cast<int>(scenes.size()); ++i) {
    scene_index.emplace(scenes[i].image_id, i);
  }
  std::vector<std::pair<int, int>> pairs;  // (caption, scene)
  for (int c = 0; c < static_cast<int>(corpus.size()); ++c) {
    auto it = scene_index.find(corpus[c].image_id);
    if (it != scene_index.end() && corpus[c].size() > 0) {
      pairs.emplace_back(c, it->second);
    }
  }
  if (pairs.empty()) throw Error("pretraining needs a non-empty paired corpus");
  if (config.batch <= 0) throw Error("batch size must be positive");

  TrainResult result{std::move(init), {}};
  EncoderStack& enc = result.encoder;
  enc.freeze = config.freeze;
  const AlignmentOptions options{config.mode, config.normalize_sim};
  std::mt19937_64 rng(config.seed);
  std::vector<int> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const int batch = std::min<int>(config.batch, static_cast<int>(pairs.size()));

  for (int step = 0; step < config.steps; ++step) {
    std::vector<SceneGrid> images;
    std::vector<TaggedCaption> captions;
    std::vector<std::string> used_images;
    while (static_cast<int>(captions.size()) < batch) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto [c, s] = pairs[order[cursor++]];
      // One caption per image inside a batch keeps off-diagonals mismatched.
      if (std::find(used_images.begin(), used_images.end(),
                    scenes[s].image_id) != used_images.end()) {
        if (used_images.size() >= scene_index.size()) break;
        continue;
      }
      used_images.push_back(scenes[s].image_id);
      captions.push_back(corpus[c]);
      images.push_back(scenes[s]);
    }
    const auto negatives =
        build_negative_batch(captions, config.negatives, stats, vocab,
                             config.seed * 1000003ULL + step, config.sampler);
    BatchGradients bg = batch_backward(images, captions, negatives, enc, options);
    apply_gradients(enc, bg.grads, learning_rate_at(config, step));

    TrainLogRow row;
    row.step = step;
    row.loss_total = bg.loss.total;
    row.loss_img = bg.loss.loss_image_side / images.size();
    row.loss_cap = bg.loss.loss_caption_side / images.size();
    const int b = static_cast<int>(images.size());
    const MatrixXd& s = bg.loss.per_pair_scores;
    row.pos_score_mean = s.leftCols(b).diagonal().mean();
    row.neg_score_mean =
        b > 1 ? (s.leftCols(b).sum() - s.leftCols(b).diagonal().sum()) /
                    (b * (b - 1))
              : 0.0;
    result.log.push_back(row);
  }
  return result;
}

void write_training_log(const std::filesystem::path& path,
                        const std::vector<TrainLogRow>& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write training log " + path.string());
  out << "step,loss_total,loss_img,loss_cap,pos_score_mean,neg_score_mean\n";
  out << std::setprecision(10);
  for (const auto& r : log) {
    out << r.step << ',' << r.loss_total << ',' << r.loss_img << ','
        << r.loss_cap << ',' << r.pos_score_mean << ',' << r.neg_score_mean
        << '\n';
  }
}

EncoderStack finetune_classifier(EncoderStack enc,
                                 const std::vector<SceneGrid>& scenes,
                                 const Vocabulary& vocab,
                                 const FinetuneConfig& config) {
  const std::vector<std::string> base = vocab.base_names();
  if (base.empty() || scenes.empty() || config.steps <= 0) return enc;
  const auto class_embs = build_class_embeddings(base, enc, config.mode,
                                                 config.use_prompt,
                                                 config.pooling);
  const int k_classes = static_cast<int>(base.size());
  std::unordered_map<std::string, int> label_of;
  for (int k = 0; k < k_classes; ++k) label_of.emplace(base[k], k);

  TrainableMask mask;
  mask.language = false;
  mask.v2l = !config.v2l_frozen;
  std::mt19937_64 rng(config.seed ^ 0x66696e65ULL);
  std::vector<int> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const int batch = std::min<int>(config.batch, static_cast<int>(scenes.size()));

  for (int step = 0; step < config.steps; ++step) {
    std::vector<const SceneGrid*> chosen;
    while (static_cast<int>(chosen.size()) < batch) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      chosen.push_back(&scenes[order[cursor++]]);
    }
    std::vector<Eigen::RowVectorXd> rows;
    std::vector<int> labels;
    for (const SceneGrid* s : chosen) {
      for (int cell = 0; cell < s->num_cells(); ++cell) {
        const CellLabel& label = s->gt[cell];
        int y = k_classes;  // background
        if (!label.is_background()) {
          auto it = label_of.find(label.cls);
          if (it == label_of.end()) continue;  // unannotated target class
          y = it->second;
        }
        rows.push_back(s->features.row(cell));
        labels.push_back(y);
      }
    }
    if (rows.empty()) continue;
    const int m = static_cast<int>(rows.size());
    MatrixXd feats(m, enc.dims.d_v);
    for (int i = 0; i < m; ++i) feats.row(i) = rows[i];

    MatrixXd classes(k_classes + 1, enc.dims.d);
    for (int k = 0; k < k_classes; ++k) {
      classes.row(k) = class_embs[k].vector.transpose();
    }
    classes.row(k_classes) = enc.params.background.row(0);

    const EncoderParams& p = enc.params;
    MatrixXd z = feats * p.vision_w;
    z.rowwise() += p.vision_b.row(0);
    MatrixXd e = z * p.v2l_w;
    e.rowwise() += p.v2l_b.row(0);
    MatrixXd logits = e * classes.transpose();
    MatrixXd d_logits(m, k_classes + 1);
    for (int i = 0; i < m; ++i) {
      const double mx = logits.row(i).maxCoeff();
      d_logits.row(i) = (logits.row(i).array() - mx).exp();
      d_logits.row(i) /= d_logits.row(i).sum();
      d_logits(i, labels[i]) -= 1.0;
    }
    d_logits /= static_cast<double>(m);

    EncoderParams g = enc.params.zeros_like();
    const MatrixXd de = d_logits * classes;
    g.background.row(0) = d_logits.col(k_classes).transpose() * e;
    g.v2l_w = z.transpose() * de;
    g.v2l_b.row(0) = de.colwise().sum();
    const MatrixXd dz = de * p.v2l_w.transpose();
    g.vision_w = feats.transpose() * dz;
    g.vision_b.row(0) = dz.colwise().sum();
    const std::int64_t pretrain_steps = enc.step;
    apply_gradients(enc, g, config.lr, mask);
    enc.step = pretrain_steps;
  }
  return enc;
}

}  // namespace ctxalign
