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

#include "ctxalign/encoder.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ctxalign {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitRange = 0.1;

// y = g * (x - mean) * rstd + b, row-wise.
MatrixXd layer_norm(const MatrixXd& x, const MatrixXd& g, const MatrixXd& b,
                    MatrixXd* xhat_out, VectorXd* rstd_out) {
  const Eigen::Index n = x.rows(), d = x.cols();
  MatrixXd xhat(n, d);
  VectorXd rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
  MatrixXd y = (xhat.array().rowwise() * g.row(0).array()).matrix();
  y.rowwise() += b.row(0);
  if (xhat_out) *xhat_out = std::move(xhat);
  if (rstd_out) *rstd_out = std::move(rstd);
  return y;
}

MatrixXd layer_norm_backward(const MatrixXd& dy, const MatrixXd& xhat,
                             const VectorXd& rstd, const MatrixXd& g,
                             MatrixXd& dg, MatrixXd& db) {
  dg.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  const MatrixXd dxhat = (dy.array().rowwise() * g.row(0).array()).matrix();
  MatrixXd dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
    dx.row(i) =
        rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
  }
  return dx;
}

MatrixXd affine(const MatrixXd& x, const MatrixXd& w, const MatrixXd& b) {
  MatrixXd y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

MatrixXd softmax_rows(const MatrixXd& s) {
  MatrixXd p(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    p.row(i) = (s.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

MatrixXd uniform(int rows, int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-kInitRange, kInitRange);
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  }
  return m;
}

MatrixXd gaussian(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  }
  return m;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

}  // namespace

std::string_view to_string(GroundingMode mode) {
  return mode == GroundingMode::kContextFree ? "context-free"
                                             : "contextualized";
}

GroundingMode parse_grounding_mode(std::string_view name) {
  if (name == "context-free") return GroundingMode::kContextFree;
  if (name == "contextualized") return GroundingMode::kContextualized;
  throw Error("unknown grounding mode '" + std::string(name) + "'");
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z = *this;
  z.for_each_block(
      [](const std::string&, MatrixXd& block, BlockGroup) { block.setZero(); });
  return z;
}

std::size_t EncoderParams::num_scalars() const {
  std::size_t n = 0;
  for_each_block([&n](const std::string&, const MatrixXd& block, BlockGroup) {
    n += static_cast<std::size_t>(block.size());
  });
  return n;
}

bool TrainableMask::allows(BlockGroup group) const {
  switch (group) {
    case BlockGroup::kLanguage: return language;
    case BlockGroup::kVision: return vision;
    case BlockGroup::kV2L: return v2l;
    case BlockGroup::kBackground: return background;
  }
  return false;
}

TrainableMask TrainableMask::from(const FreezeFlags& flags) {
  TrainableMask mask;
  mask.language = !flags.language_frozen;
  mask.v2l = !flags.v2l_frozen;
  return mask;
}

int EncoderStack::token_id(std::string_view text) const {
  auto it = token_ids.find(std::string(text));
  return it == token_ids.end() ? 0 : it->second;
}

std::vector<std::string> build_token_inventory(
    const std::vector<TaggedCaption>& corpus, const Vocabulary& vocab,
    const std::vector<std::string>& extra) {
  std::set<std::string> words;
  for (const auto& c : corpus) {
    for (const auto& t : c.tokens) words.insert(t.text);
  }
  for (const auto& [term, cls] : vocab.term_index()) {
    for (auto& w : split_words(term)) words.insert(w);
  }
  for (const auto& w : extra) words.insert(w);
  for (const char* w : {"a", "an", "."}) words.insert(w);
  words.erase(std::string(kUnknownToken));
  std::vector<std::string> out{std::string(kUnknownToken)};
  out.insert(out.end(), words.begin(), words.end());
  return out;
}

EncoderStack create_encoder(const EncoderDims& dims,
                            std::vector<std::string> inventory,
                            std::uint64_t seed) {
  if (dims.d <= 0 || dims.d_v <= 0 || dims.d_r <= 0 || dims.d_ff <= 0 ||
      dims.n_layers < 0) {
    throw Error("encoder dimensions must be positive");
  }
  if (inventory.empty() || inventory[0] != kUnknownToken) {
    inventory.insert(inventory.begin(), std::string(kUnknownToken));
  }
  EncoderStack enc;
  enc.dims = dims;
  enc.seed = seed;
  enc.tokens = std::move(inventory);
  for (int i = 0; i < static_cast<int>(enc.tokens.size()); ++i) {
    enc.token_ids.emplace(enc.tokens[i], i);
  }
  std::mt19937_64 rng(seed);
  const int d = dims.d;
  EncoderParams& p = enc.params;
  p.word_table = gaussian(static_cast<int>(enc.tokens.size()), d, rng);
  for (int l = 0; l < dims.n_layers; ++l) {
    ContextLayer L;
    L.wq = uniform(d, d, rng);
    L.wk = uniform(d, d, rng);
    L.wv = uniform(d, d, rng);
    L.wo = uniform(d, d, rng);
    L.bq = L.bk = L.bv = L.bo = MatrixXd::Zero(1, d);
    L.ln1_g = L.ln2_g = MatrixXd::Ones(1, d);
    L.ln1_b = L.ln2_b = MatrixXd::Zero(1, d);
    L.w1 = uniform(d, dims.d_ff, rng);
    L.b1 = MatrixXd::Zero(1, dims.d_ff);
    L.w2 = uniform(dims.d_ff, d, rng);
    L.b2 = MatrixXd::Zero(1, d);
    p.layers.push_back(std::move(L));
  }
  p.vision_w = uniform(dims.d_v, dims.d_r, rng);
  p.vision_b = MatrixXd::Zero(1, dims.d_r);
  p.v2l_w = uniform(dims.d_r, d, rng);
  p.v2l_b = MatrixXd::Zero(1, d);
  p.background = MatrixXd::Zero(1, d);
  return enc;
}

MatrixXd positional_encoding(int n, int d, double scale) {
  MatrixXd pe(n, d);
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -2.0 * (i / 2) / d);
      pe(pos, i) = scale * ((i % 2 == 0) ? std::sin(pos * freq)
                                         : std::cos(pos * freq));
    }
  }
  return pe;
}

std::vector<int> token_ids_of(const TaggedCaption& caption,
                              const EncoderStack& enc) {
  std::vector<int> ids;
  ids.reserve(caption.tokens.size());
  for (const auto& t : caption.tokens) ids.push_back(enc.token_id(t.text));
  return ids;
}

MatrixXd embed_caption_context_free(const TaggedCaption& caption,
                                    const EncoderStack& enc) {
  MatrixXd out(caption.size(), enc.dims.d);
  for (int j = 0; j < caption.size(); ++j) {
    out.row(j) = enc.params.word_table.row(enc.token_id(caption.tokens[j].text));
  }
  return out;
}

MatrixXd contextualize(const MatrixXd& x0, const EncoderParams& params,
                       ContextCache* cache) {
  if (cache) cache->layers.assign(params.layers.size(), LayerCache{});
  MatrixXd x = x0;
  const double scale = 1.0 / std::sqrt(static_cast<double>(x0.cols()));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const ContextLayer& L = params.layers[l];
    LayerCache local;
    LayerCache& c = cache ? cache->layers[l] : local;
    c.x_in = x;
    c.h1 = layer_norm(x, L.ln1_g, L.ln1_b, &c.xhat1, &c.rstd1);
    c.q = affine(c.h1, L.wq, L.bq);
    c.k = affine(c.h1, L.wk, L.bk);
    c.v = affine(c.h1, L.wv, L.bv);
    c.p = softmax_rows(c.q * c.k.transpose() * scale);
    c.a = c.p * c.v;
    c.x_mid = x + affine(c.a, L.wo, L.bo);
    c.h2 = layer_norm(c.x_mid, L.ln2_g, L.ln2_b, &c.xhat2, &c.rstd2);
    c.g = affine(c.h2, L.w1, L.b1).array().tanh().matrix();
    x = c.x_mid + affine(c.g, L.w2, L.b2);
  }
  return x;
}

MatrixXd contextualize_backward(const ContextCache& cache,
                                const EncoderParams& params,
                                const MatrixXd& d_out, EncoderParams& grads) {
  MatrixXd dx = d_out;
  for (int l = static_cast<int>(params.layers.size()) - 1; l >= 0; --l) {
    const ContextLayer& L = params.layers[l];
    ContextLayer& G = grads.layers[l];
    const LayerCache& c = cache.layers[l];
    const double scale = 1.0 / std::sqrt(static_cast<double>(dx.cols()));

    // feedforward branch
    G.w2 += c.g.transpose() * dx;
    G.b2.row(0) += dx.colwise().sum();
    const MatrixXd du =
        ((dx * L.w2.transpose()).array() * (1.0 - c.g.array().square()))
            .matrix();
    G.w1 += c.h2.transpose() * du;
    G.b1.row(0) += du.colwise().sum();
    const MatrixXd dh2 = du * L.w1.transpose();
    dx += layer_norm_backward(dh2, c.xhat2, c.rstd2, L.ln2_g, G.ln2_g, G.ln2_b);

    // attention branch
    G.wo += c.a.transpose() * dx;
    G.bo.row(0) += dx.colwise().sum();
    const MatrixXd da = dx * L.wo.transpose();
    const MatrixXd dp = da * c.v.transpose();
    const MatrixXd dv = c.p.transpose() * da;
    MatrixXd ds = c.p.array() *
                  (dp.array().colwise() -
                   (dp.array() * c.p.array()).rowwise().sum());
    ds *= scale;
    const MatrixXd dq = ds * c.k;
    const MatrixXd dk = ds.transpose() * c.q;
    G.wq += c.h1.transpose() * dq;
    G.bq.row(0) += dq.colwise().sum();
    G.wk += c.h1.transpose() * dk;
    G.bk.row(0) += dk.colwise().sum();
    G.wv += c.h1.transpose() * dv;
    G.bv.row(0) += dv.colwise().sum();
    const MatrixXd dh1 =
        dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
    dx += layer_norm_backward(dh1, c.xhat1, c.rstd1, L.ln1_g, G.ln1_g, G.ln1_b);
  }
  return dx;
}

MatrixXd embed_tokens_contextualized(std::span<const std::string> tokens,
                                     const EncoderStack& enc) {
  const int n = static_cast<int>(tokens.size());
  MatrixXd x0(n, enc.dims.d);
  for (int j = 0; j < n; ++j) {
    x0.row(j) = enc.params.word_table.row(enc.token_id(tokens[j]));
  }
  if (n == 0) return x0;
  x0 += positional_encoding(n, enc.dims.d, enc.dims.pos_scale);
  return contextualize(x0, enc.params);
}

MatrixXd embed_caption_contextualized(const TaggedCaption& caption,
                                      const EncoderStack& enc) {
  std::vector<std::string> words;
  words.reserve(caption.tokens.size());
  for (const auto& t : caption.tokens) words.push_back(t.text);
  return embed_tokens_contextualized(words, enc);
}

MatrixXd embed_words(const TaggedCaption& caption, const EncoderStack& enc,
                     GroundingMode mode) {
  return mode == GroundingMode::kContextFree
             ? embed_caption_context_free(caption, enc)
             : embed_caption_contextualized(caption, enc);
}

MatrixXd embed_region_features(const MatrixXd& features,
                               const EncoderStack& enc) {
  if (features.cols() != enc.dims.d_v) {
    throw Error("region feature width " + std::to_string(features.cols()) +
                " does not match vision projection input " +
                std::to_string(enc.dims.d_v));
  }
  const EncoderParams& p = enc.params;
  return affine(affine(features, p.vision_w, p.vision_b), p.v2l_w, p.v2l_b);
}

MatrixXd embed_regions(const SceneGrid& scene, const EncoderStack& enc) {
  return embed_region_features(scene.features, enc);
}

std::vector<std::string> class_prompt(std::string_view class_name) {
  std::vector<std::string> words = split_words(class_name);
  const bool vowel =
      !class_name.empty() &&
      std::string_view("aeiou").find(static_cast<char>(std::tolower(
          static_cast<unsigned char>(class_name.front())))) !=
          std::string_view::npos;
  std::vector<std::string> out{vowel ? "an" : "a"};
  out.insert(out.end(), words.begin(), words.end());
  out.push_back(".");
  return out;
}

std::vector<ClassEmbedding> build_class_embeddings(
    const std::vector<std::string>& class_names, const EncoderStack& enc,
    GroundingMode mode, bool use_prompt, PromptPooling pooling) {
  if (class_names.empty()) throw Error("empty class list");
  std::vector<ClassEmbedding> out;
  for (const auto& name : class_names) {
    const std::vector<std::string> words = split_words(name);
    if (words.empty()) throw Error("empty class name");
    ClassEmbedding ce;
    ce.class_name = name;
    ce.mode = mode;
    if (mode == GroundingMode::kContextFree) {
      VectorXd sum = VectorXd::Zero(enc.dims.d);
      for (const auto& w : words) {
        sum += enc.params.word_table.row(enc.token_id(w)).transpose();
      }
      ce.vector = sum / static_cast<double>(words.size());
    } else {
      std::vector<std::string> seq = use_prompt ? class_prompt(name) : words;
      const int first = use_prompt ? 1 : 0;
      const MatrixXd f = embed_tokens_contextualized(seq, enc);
      const int count =
          pooling == PromptPooling::kFirst ? 1 : static_cast<int>(words.size());
      ce.vector = f.middleRows(first, count).colwise().mean().transpose();
      ce.prompt_used = use_prompt;
    }
    out.push_back(std::move(ce));
  }
  return out;
}

void apply_gradients(EncoderStack& enc, const EncoderParams& grads,
                     double learning_rate, const TrainableMask& mask) {
  std::vector<std::pair<MatrixXd*, const MatrixXd*>> updates;
  std::vector<const MatrixXd*> grad_blocks;
  grads.for_each_block([&](const std::string&, const MatrixXd& g, BlockGroup) {
    grad_blocks.push_back(&g);
  });
  std::size_t i = 0;
  enc.params.for_each_block(
      [&](const std::string& name, MatrixXd& block, BlockGroup group) {
        const MatrixXd& g = *grad_blocks[i++];
        if (!mask.allows(group)) return;
        if (g.rows() != block.rows() || g.cols() != block.cols()) {
          throw Error("gradient shape mismatch for block " + name);
        }
        if (!g.allFinite()) throw Error("non-finite gradient in block " + name);
        updates.emplace_back(&block, &g);
      });
  for (auto& [block, g] : updates) *block -= learning_rate * *g;
  ++enc.step;
}

void apply_gradients(EncoderStack& enc, const EncoderParams& grads,
                     double learning_rate) {
  apply_gradients(enc, grads, learning_rate, TrainableMask::from(enc.freeze));
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path,
                     const EncoderStack& enc) {
  json j;
  j["format"] = "ctxalign-checkpoint-1";
  j["dims"] = {{"d", enc.dims.d},         {"d_v", enc.dims.d_v},
               {"d_r", enc.dims.d_r},     {"d_ff", enc.dims.d_ff},
               {"n_layers", enc.dims.n_layers},
               {"pos_scale", enc.dims.pos_scale}};
  j["freeze"] = {{"language_frozen", enc.freeze.language_frozen},
                 {"v2l_frozen", enc.freeze.v2l_frozen}};
  j["seed"] = enc.seed;
  j["step"] = enc.step;
  j["tokens"] = enc.tokens;
  json blocks = json::object();
  enc.params.for_each_block(
      [&](const std::string& name, const MatrixXd& block, BlockGroup) {
        std::vector<double> data(block.size());
        for (Eigen::Index r = 0; r < block.rows(); ++r) {
          for (Eigen::Index c = 0; c < block.cols(); ++c) {
            data[r * block.cols() + c] = block(r, c);
          }
        }
        blocks[name] = {{"rows", block.rows()},
                        {"cols", block.cols()},
                        {"data", std::move(data)}};
      });
  j["blocks"] = std::move(blocks);
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

EncoderStack load_checkpoint(const std::filesystem::path& path,
                             const std::optional<EncoderDims>& expected) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("checkpoint " + path.string() + ": " + e.what());
  }
  try {
    EncoderDims dims;
    const auto& jd = j.at("dims");
    dims.d = jd.at("d").get<int>();
    dims.d_v = jd.at("d_v").get<int>();
    dims.d_r = jd.at("d_r").get<int>();
    dims.d_ff = jd.at("d_ff").get<int>();
    dims.n_layers = jd.at("n_layers").get<int>();
    dims.pos_scale = jd.at("pos_scale").get<double>();
    if (expected && !(*expected == dims)) {
      throw Error("checkpoint dimensions do not match the expected encoder");
    }
    EncoderStack enc = create_encoder(
        dims, j.at("tokens").get<std::vector<std::string>>(), 0);
    enc.seed = j.at("seed").get<std::uint64_t>();
    enc.step = j.at("step").get<std::int64_t>();
    enc.freeze.language_frozen = j.at("freeze").at("language_frozen").get<bool>();
    enc.freeze.v2l_frozen = j.at("freeze").at("v2l_frozen").get<bool>();
    const json& blocks = j.at("blocks");
    enc.params.for_each_block(
        [&](const std::string& name, MatrixXd& block, BlockGroup) {
          if (!blocks.contains(name)) {
            throw Error("checkpoint missing block " + name);
          }
          const json& b = blocks[name];
          const auto rows = b.at("rows").get<Eigen::Index>();
          const auto cols = b.at("cols").get<Eigen::Index>();
          if (rows != block.rows() || cols != block.cols()) {
            throw Error("checkpoint block " + name + " has shape " +
                        std::to_string(rows) + "x" + std::to_string(cols) +
                        ", expected " + std::to_string(block.rows()) + "x" +
                        std::to_string(block.cols()));
          }
          const auto data = b.at("data").get<std::vector<double>>();
          if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
            throw Error("checkpoint block " + name + " has wrong length");
          }
          for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
              block(r, c) = data[r * cols + c];
            }
          }
        });
    return enc;
  } catch (const json::exception& e) {
    throw Error("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace ctxalign
