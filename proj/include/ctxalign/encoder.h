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

// Desk-scale encoders: a word-embedding table (context-free space), a small
// pre-norm self-attention contextualizer (contextualized space), a linear
// vision projection over region features and the vision-to-language (V2L)
// projection. All matrices use the row-vector convention: Y = X * W + b.

#ifndef CTXALIGN_ENCODER_H_
#define CTXALIGN_ENCODER_H_

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxalign/corpus.h"
#include "ctxalign/scene.h"

namespace ctxalign {

enum class GroundingMode { kContextFree, kContextualized };

std::string_view to_string(GroundingMode mode);
GroundingMode parse_grounding_mode(std::string_view name);

struct EncoderDims {
  int d = 32;         // language embedding width
  int d_v = 16;       // raw region feature width
  int d_r = 32;       // visual embedding width
  int d_ff = 64;      // feedforward hidden width
  int n_layers = 2;
  double pos_scale = 0.1;  // amplitude of the sinusoidal position code

  bool operator==(const EncoderDims&) const = default;
};

struct ContextLayer {
  Eigen::MatrixXd wq, bq, wk, bk, wv, bv, wo, bo;
  Eigen::MatrixXd ln1_g, ln1_b;
  Eigen::MatrixXd w1, b1, w2, b2;
  Eigen::MatrixXd ln2_g, ln2_b;
};

enum class BlockGroup { kLanguage, kVision, kV2L, kBackground };

// Every trainable array. Biases and vectors are stored as 1 x n matrices so
// all blocks can be visited uniformly; gradients use the same type.
struct EncoderParams {
  Eigen::MatrixXd word_table;  // |tokens| x d
  std::vector<ContextLayer> layers;
  Eigen::MatrixXd vision_w, vision_b;  // d_v x d_r, 1 x d_r
  Eigen::MatrixXd v2l_w, v2l_b;        // d_r x d, 1 x d
  Eigen::MatrixXd background;          // 1 x d

  // f(name, block, group) over every block in a fixed order.
  template <typename F>
  void for_each_block(F&& f);
  template <typename F>
  void for_each_block(F&& f) const;

  EncoderParams zeros_like() const;
  std::size_t num_scalars() const;
};

struct FreezeFlags {
  bool language_frozen = true;
  bool v2l_frozen = false;

  bool operator==(const FreezeFlags&) const = default;
};

// Which parameter groups an optimizer step may touch.
struct TrainableMask {
  bool language = true;
  bool vision = true;
  bool v2l = true;
  bool background = true;

  bool allows(BlockGroup group) const;
  static TrainableMask from(const FreezeFlags& flags);
};

inline constexpr std::string_view kUnknownToken = "<unk>";

struct EncoderStack {
  EncoderDims dims;
  std::vector<std::string> tokens;  // row i of word_table; tokens[0] is UNK
  std::unordered_map<std::string, int> token_ids;
  EncoderParams params;
  FreezeFlags freeze;
  std::uint64_t seed = 0;
  std::int64_t step = 0;

  int token_id(std::string_view text) const;
};

// Sorted unique inventory with UNK first.
std::vector<std::string> build_token_inventory(
    const std::vector<TaggedCaption>& corpus, const Vocabulary& vocab,
    const std::vector<std::string>& extra = {});

// N(0, 1) word table (the scale of layer-normed outputs), Uniform(-0.1, 0.1)
// weights, zero biases, unit layer-norm gains, zero background embedding.
EncoderStack create_encoder(const EncoderDims& dims,
                            std::vector<std::string> inventory,
                            std::uint64_t seed);

Eigen::MatrixXd positional_encoding(int n, int d, double scale);

std::vector<int> token_ids_of(const TaggedCaption& caption,
                              const EncoderStack& enc);

// Row j = word_table[token_j] (e-space).
Eigen::MatrixXd embed_caption_context_free(const TaggedCaption& caption,
                                           const EncoderStack& enc);
// Row j = contextualizer output at j (f-space).
Eigen::MatrixXd embed_caption_contextualized(const TaggedCaption& caption,
                                             const EncoderStack& enc);
Eigen::MatrixXd embed_tokens_contextualized(std::span<const std::string> tokens,
                                            const EncoderStack& enc);
Eigen::MatrixXd embed_words(const TaggedCaption& caption,
                            const EncoderStack& enc, GroundingMode mode);

// n_I x d, rows in row-major cell order: v2l(vision_proj(feature)). The same
// projection serves e- and f-space; the grounding mode only decides which
// word space the output is compared against.
Eigen::MatrixXd embed_regions(const SceneGrid& scene, const EncoderStack& enc);
Eigen::MatrixXd embed_region_features(const Eigen::MatrixXd& features,
                                      const EncoderStack& enc);

// --- contextualizer with cached activations for the backward pass ---------

struct LayerCache {
  Eigen::MatrixXd x_in;
  Eigen::MatrixXd xhat1;
  Eigen::VectorXd rstd1;
  Eigen::MatrixXd h1, q, k, v, p, a;
  Eigen::MatrixXd x_mid;
  Eigen::MatrixXd xhat2;
  Eigen::VectorXd rstd2;
  Eigen::MatrixXd h2, g;
};

struct ContextCache {
  std::vector<LayerCache> layers;
};

Eigen::MatrixXd contextualize(const Eigen::MatrixXd& x0,
                              const EncoderParams& params,
                              ContextCache* cache = nullptr);
// Accumulates layer gradients into `grads` and returns d loss / d x0.
Eigen::MatrixXd contextualize_backward(const ContextCache& cache,
                                       const EncoderParams& params,
                                       const Eigen::MatrixXd& d_out,
                                       EncoderParams& grads);

// --- class embeddings ------------------------------------------------------

enum class PromptPooling { kAverage, kFirst };

struct ClassEmbedding {
  std::string class_name;
  Eigen::VectorXd vector;
  GroundingMode mode = GroundingMode::kContextFree;
  bool prompt_used = false;
};

// "a <name> ." or "an <name> ." by the first letter of the name.
std::vector<std::string> class_prompt(std::string_view class_name);

std::vector<ClassEmbedding> build_class_embeddings(
    const std::vector<std::string>& class_names, const EncoderStack& enc,
    GroundingMode mode, bool use_prompt,
    PromptPooling pooling = PromptPooling::kAverage);

// --- optimizer and persistence --------------------------------------------

// Plain SGD on the blocks allowed by `mask`. Throws Error naming the block
// when a gradient is non-finite. Increments enc.step.
void apply_gradients(EncoderStack& enc, const EncoderParams& grads,
                     double learning_rate, const TrainableMask& mask);
void apply_gradients(EncoderStack& enc, const EncoderParams& grads,
                     double learning_rate);

void save_checkpoint(const std::filesystem::path& path,
                     const EncoderStack& enc);
// Rejects inconsistent blocks, and a dims mismatch when `expected` is given.
EncoderStack load_checkpoint(const std::filesystem::path& path,
                             const std::optional<EncoderDims>& expected = {});

// ---------------------------------------------------------------------------

template <typename F>
void EncoderParams::for_each_block(F&& f) {
  f("word_table", word_table, BlockGroup::kLanguage);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    ContextLayer& L = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    f(p + "wq", L.wq, BlockGroup::kLanguage);
    f(p + "bq", L.bq, BlockGroup::kLanguage);
    f(p + "wk", L.wk, BlockGroup::kLanguage);
    f(p + "bk", L.bk, BlockGroup::kLanguage);
    f(p + "wv", L.wv, BlockGroup::kLanguage);
    f(p + "bv", L.bv, BlockGroup::kLanguage);
    f(p + "wo", L.wo, BlockGroup::kLanguage);
    f(p + "bo", L.bo, BlockGroup::kLanguage);
    f(p + "ln1_g", L.ln1_g, BlockGroup::kLanguage);
    f(p + "ln1_b", L.ln1_b, BlockGroup::kLanguage);
    f(p + "w1", L.w1, BlockGroup::kLanguage);
    f(p + "b1", L.b1, BlockGroup::kLanguage);
    f(p + "w2", L.w2, BlockGroup::kLanguage);
    f(p + "b2", L.b2, BlockGroup::kLanguage);
    f(p + "ln2_g", L.ln2_g, BlockGroup::kLanguage);
    f(p + "ln2_b", L.ln2_b, BlockGroup::kLanguage);
  }
  f("vision_w", vision_w, BlockGroup::kVision);
  f("vision_b", vision_b, BlockGroup::kVision);
  f("v2l_w", v2l_w, BlockGroup::kV2L);
  f("v2l_b", v2l_b, BlockGroup::kV2L);
  f("background", background, BlockGroup::kBackground);
}

template <typename F>
void EncoderParams::for_each_block(F&& f) const {
  const_cast<EncoderParams*>(this)->for_each_block(
      [&f](const std::string& name, Eigen::MatrixXd& block, BlockGroup group) {
        f(name, static_cast<const Eigen::MatrixXd&>(block), group);
      });
}

}  // namespace ctxalign

#endif  // CTXALIGN_ENCODER_H_
