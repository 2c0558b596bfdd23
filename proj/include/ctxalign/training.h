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

#ifndef CTXALIGN_TRAINING_H_
#define CTXALIGN_TRAINING_H_

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ctxalign/corpus.h"
#include "ctxalign/encoder.h"
#include "ctxalign/grounding.h"
#include "ctxalign/negatives.h"
#include "ctxalign/scene.h"

namespace ctxalign {

struct AlignmentOptions {
  GroundingMode mode = GroundingMode::kContextualized;
  // Cosine instead of raw dot-product similarity.
  bool normalize_sim = false;
};

struct BatchLoss {
  double loss_image_side = 0;    // summed over the batch
  double loss_caption_side = 0;  // summed over the batch
  double total = 0;              // (image + caption) / batch size
  // |B_I| x (|B_C| + |B_N|); negatives occupy the trailing columns.
  Eigen::MatrixXd per_pair_scores;
};

// images[i] pairs with captions[i]. Every negative is appended to every
// image-side denominator; the caption side contrasts over B_I only.
BatchLoss batch_forward(const std::vector<SceneGrid>& images,
                        const std::vector<TaggedCaption>& captions,
                        const std::vector<NegativeSample>& negatives,
                        const EncoderStack& enc,
                        const AlignmentOptions& options = {});

struct BatchGradients {
  BatchLoss loss;
  EncoderParams grads;  // frozen blocks are exactly zero
};

BatchGradients batch_backward(const std::vector<SceneGrid>& images,
                              const std::vector<TaggedCaption>& captions,
                              const std::vector<NegativeSample>& negatives,
                              const EncoderStack& enc,
                              const AlignmentOptions& options = {});

struct TrainConfig {
  GroundingMode mode = GroundingMode::kContextualized;
  NegativeMode negatives = NegativeMode::kNone;
  FreezeFlags freeze;
  int steps = 2000;
  int batch = 8;
  double lr = 0.05;
  // Fractions of `steps` after which the rate is multiplied by decay_factor.
  std::vector<double> decay_at = {0.5, 0.875};
  double decay_factor = 0.1;
  std::uint64_t seed = 0;
  bool normalize_sim = false;
  SamplerOptions sampler;
};

double learning_rate_at(const TrainConfig& config, int step);

struct TrainLogRow {
  int step = 0;
  double loss_total = 0;
  double loss_img = 0;
  double loss_cap = 0;
  double pos_score_mean = 0;
  double neg_score_mean = 0;  // in-batch mismatched pairs, negatives excluded
};

struct TrainResult {
  EncoderStack encoder;
  std::vector<TrainLogRow> log;
};

// Pairs each caption with the scene of the same image id and runs shuffled
// mini-batch SGD. Captions without a scene are skipped; an empty pairing is
// an error.
TrainResult pretrain(const std::vector<TaggedCaption>& corpus,
                     const std::vector<SceneGrid>& scenes, EncoderStack init,
                     const Vocabulary& vocab, const AdjNounStats& stats,
                     const TrainConfig& config);

void write_training_log(const std::filesystem::path& path,
                        const std::vector<TrainLogRow>& log);

// Supervised region classification on base classes, the desk-scale analog
// of detector finetuning: cross-entropy over the base class embeddings plus
// the background embedding. Class embeddings are computed once and held
// fixed; the vision projection, background embedding and (optionally) the
// V2L layer are trained. Target-class cells are ignored.
struct FinetuneConfig {
  int steps = 300;
  int batch = 8;  // scenes per step
  double lr = 0.05;
  bool v2l_frozen = true;
  bool use_prompt = true;
  PromptPooling pooling = PromptPooling::kAverage;
  GroundingMode mode = GroundingMode::kContextualized;
  std::uint64_t seed = 0;
};

EncoderStack finetune_classifier(EncoderStack enc,
                                 const std::vector<SceneGrid>& scenes,
                                 const Vocabulary& vocab,
                                 const FinetuneConfig& config);

}  // namespace ctxalign

#endif  // CTXALIGN_TRAINING_H_
