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

// Region-word grounding score and the contrastive grounding losses.
//
// For region embeddings R (n_I x d) and word embeddings W (n_C x d):
//
//   sim  = R * W^T
//   attn = column-wise softmax of sim over the n_I regions
//   score = (1 / n_C) * sum_j sum_i attn(i, j) * sim(i, j)
//
// The image-side loss contrasts a positive score against other captions
// (and appended negative captions); the caption-side loss contrasts it
// against other images. Both are evaluated in log-sum-exp form.

#ifndef CTXALIGN_GROUNDING_H_
#define CTXALIGN_GROUNDING_H_

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "ctxalign/corpus.h"

namespace ctxalign {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct GroundingResult {
  Matrix<Scalar> sim;   // n_I x n_C
  Matrix<Scalar> attn;  // n_I x n_C, columns sum to one
  Scalar score = 0;
};

// Column-wise softmax with max subtraction.
template <typename Derived>
Matrix<typename Derived::Scalar> attention(
    const Eigen::MatrixBase<Derived>& sim) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> attn(sim.rows(), sim.cols());
  for (Eigen::Index j = 0; j < sim.cols(); ++j) {
    const Scalar m = sim.col(j).maxCoeff();
    attn.col(j) = (sim.col(j).array() - m).exp();
    attn.col(j) /= attn.col(j).sum();
  }
  return attn;
}

// Rows scaled to unit length; zero rows stay zero.
template <typename Derived>
Matrix<typename Derived::Scalar> normalize_rows(
    const Eigen::MatrixBase<Derived>& m) {
  Matrix<typename Derived::Scalar> out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const auto norm = out.row(i).norm();
    if (norm > 0) out.row(i) /= norm;
  }
  return out;
}

template <typename DerivedR, typename DerivedW>
GroundingResult<typename DerivedR::Scalar> grounding_score(
    const Eigen::MatrixBase<DerivedR>& region_emb,
    const Eigen::MatrixBase<DerivedW>& word_emb) {
  using Scalar = typename DerivedR::Scalar;
  if (word_emb.rows() == 0) {
    throw Error("grounding score undefined for an empty caption");
  }
  if (region_emb.rows() == 0) {
    throw Error("grounding score needs at least one region");
  }
  if (region_emb.cols() != word_emb.cols()) {
    throw Error("region and word embeddings differ in width");
  }
  GroundingResult<Scalar> r;
  r.sim = region_emb * word_emb.transpose();
  r.attn = attention(r.sim);
  r.score = (r.attn.array() * r.sim.array()).sum() /
            static_cast<Scalar>(word_emb.rows());
  return r;
}

// d score / d sim for a computed result:
//   (1 / n_C) * attn(i, j) * (1 + sim(i, j) - sum_i' attn(i', j) sim(i', j))
template <typename Scalar>
Matrix<Scalar> score_grad_wrt_sim(const GroundingResult<Scalar>& r) {
  const Eigen::Index n_c = r.sim.cols();
  Matrix<Scalar> g(r.sim.rows(), n_c);
  for (Eigen::Index j = 0; j < n_c; ++j) {
    const Scalar expected = r.attn.col(j).dot(r.sim.col(j));
    g.col(j) = r.attn.col(j).array() * (1 + r.sim.col(j).array() - expected);
  }
  return g / static_cast<Scalar>(n_c);
}

template <typename Scalar>
Scalar log_sum_exp(Scalar first, std::span<const Scalar> rest) {
  Scalar m = first;
  for (Scalar s : rest) m = std::max(m, s);
  if (!std::isfinite(m)) return m;
  Scalar acc = std::exp(first - m);
  for (Scalar s : rest) acc += std::exp(s - m);
  return m + std::log(acc);
}

// -log(exp(pos) / (exp(pos) + sum exp(others))).
template <typename Scalar>
Scalar loss_image_side(Scalar score_pos, std::span<const Scalar> scores_others) {
  return log_sum_exp(score_pos, scores_others) - score_pos;
}

template <typename Scalar>
Scalar loss_caption_side(Scalar score_pos,
                         std::span<const Scalar> scores_other_images) {
  return log_sum_exp(score_pos, scores_other_images) - score_pos;
}

}  // namespace ctxalign

#endif  // CTXALIGN_GROUNDING_H_
