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


// Central-difference check of batch_backward.

#ifndef CTXALIGN_TESTS_GRADCHECK_H_
#define CTXALIGN_TESTS_GRADCHECK_H_

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "ctxalign/synthetic.h"
#include "ctxalign/training.h"

namespace ctxalign::testing {

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst_block;
  int n_checked = 0;
  std::set<std::string> blocks_checked;
};

// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Checks every entry of every trainable block; word-table rows of tokens
// absent from the batch are skipped (their gradient is exactly zero).
inline GradCheckResult check_gradients(const std::vector<SceneGrid>& images,
                                       const std::vector<TaggedCaption>& captions,
                                       const std::vector<NegativeSample>& negatives,
                                       const EncoderStack& enc,
                                       const AlignmentOptions& options,
                                       double h = 1e-5) {
  const BatchGradients bg = batch_backward(images, captions, negatives, enc, options);
  std::set<int> used_rows;
  for (const auto& c : captions) {
    for (int id : token_ids_of(c, enc)) used_rows.insert(id);
  }
  for (const auto& n : negatives) {
    for (int id : token_ids_of(n.caption, enc)) used_rows.insert(id);
  }
  std::vector<const Eigen::MatrixXd*> grads;
  bg.grads.for_each_block([&](const std::string&, const Eigen::MatrixXd& g, BlockGroup) {
    grads.push_back(&g);
  });
  const TrainableMask mask = TrainableMask::from(enc.freeze);
  EncoderStack probe = enc;
  GradCheckResult result;
  std::size_t index = 0;
  probe.params.for_each_block([&](const std::string& name, Eigen::MatrixXd& block,
                                  BlockGroup group) {
    const Eigen::MatrixXd& g = *grads[index++];
    // The background embedding does not enter the grounding loss.
    if (!mask.allows(group) || group == BlockGroup::kBackground) {
      return;
    }
    result.blocks_checked.insert(name);
    for (Eigen::Index r = 0; r < block.rows(); ++r) {
      if (name == "word_table" && !used_rows.count(static_cast<int>(r))) continue;
      for (Eigen::Index c = 0; c < block.cols(); ++c) {
        const double saved = block(r, c);
        block(r, c) = saved + h;
        const double plus = batch_forward(images, captions, negatives, probe, options).total;
        block(r, c) = saved - h;
        const double minus = batch_forward(images, captions, negatives, probe, options).total;
        block(r, c) = saved;
        const double err = relative_error(g(r, c), (plus - minus) / (2 * h));
        ++result.n_checked;
        if (err > result.max_rel_error) {
          result.max_rel_error = err;
          result.worst_block = name;
        }
      }
    }
  });
  return result;
}

struct GradCheckBatch {
  SyntheticData data;
  Vocabulary vocab;
  AdjNounStats stats;
  std::vector<SceneGrid> images;
  std::vector<TaggedCaption> captions;
  EncoderStack enc;
};

inline EncoderDims small_dims() {
  EncoderDims dims;
  dims.d = 8;
  dims.d_r = 8;
  dims.d_ff = 12;
  return dims;
}

// Two small planted scenes and a freshly initialized, fully trainable encoder.
inline GradCheckBatch make_gradcheck_batch(std::uint64_t seed,
                                           const EncoderDims& dims = small_dims()) {
  SyntheticSpec spec;
  spec.n_scenes = 8;
  spec.grid_h = 3;
  spec.grid_w = 3;
  spec.max_objects = 2;
  GradCheckBatch b;
  b.data = generate_synthetic(spec, seed);
  b.vocab = build_vocabulary(b.data.synonyms, b.data.base_names);
  b.stats = compute_adj_noun_stats(b.data.corpus, b.vocab);
  b.images = {b.data.scenes[0], b.data.scenes[1]};
  b.captions = {b.data.corpus[0], b.data.corpus[1]};
  b.enc = create_encoder(dims, build_token_inventory(b.data.corpus, b.vocab), seed);
  b.enc.freeze = FreezeFlags{false, false};
  return b;
}

}  // namespace ctxalign::testing

#endif  // CTXALIGN_TESTS_GRADCHECK_H_
