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

// Single-token swap negatives for the image-side contrastive denominator.

#ifndef CTXALIGN_NEGATIVES_H_
#define CTXALIGN_NEGATIVES_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctxalign/corpus.h"

namespace ctxalign {

enum class SwapKind { kAdjSwap, kNounSwap };

std::string_view to_string(SwapKind kind);

struct NegativeSample {
  std::string source_caption_id;
  SwapKind kind = SwapKind::kAdjSwap;
  int swapped_index = 0;
  // Token position of the modified vocabulary noun.
  int noun_index = 0;
  std::string original_text;
  std::string replacement_text;
  TaggedCaption caption;
};

enum class NegativeMode { kNone, kAdj, kNoun, kAdjNoun, kRandomAdj };

std::string_view to_string(NegativeMode mode);
NegativeMode parse_negative_mode(std::string_view name);

enum class NounPool { kVocab, kAllCorpusNouns };

struct SamplerOptions {
  // Weight plausible adjectives by co-occurrence count instead of uniformly.
  bool frequency_weighted = false;
  NounPool noun_pool = NounPool::kVocab;
  // Candidate nouns for NounPool::kAllCorpusNouns.
  std::vector<std::string> corpus_nouns;
};

// Stable per-caption seed: mixes `rng_seed` with a hash of `caption_id`.
std::uint64_t derive_seed(std::uint64_t rng_seed, std::string_view caption_id);

std::optional<NegativeSample> gen_adj_negative(
    const TaggedCaption& caption, const AdjNounStats& stats,
    const Vocabulary& vocab, std::uint64_t rng_seed,
    const SamplerOptions& options = {});

std::optional<NegativeSample> gen_noun_negative(
    const TaggedCaption& caption, const Vocabulary& vocab,
    std::uint64_t rng_seed, const SamplerOptions& options = {});

// Replaces the vocabulary noun at `noun_index` (which must be a single-token
// term) with a term from a different class.
std::optional<NegativeSample> swap_noun_at(const TaggedCaption& caption,
                                           int noun_index,
                                           const Vocabulary& vocab,
                                           std::uint64_t rng_seed,
                                           const SamplerOptions& options = {});

// Replacement drawn from every corpus adjective. Without a vocabulary any
// amod adjective is eligible; with one, only adjectives over vocabulary nouns.
std::optional<NegativeSample> gen_random_adj_negative(
    const TaggedCaption& caption, const AdjNounStats& stats,
    std::uint64_t rng_seed);
std::optional<NegativeSample> gen_random_adj_negative(
    const TaggedCaption& caption, const AdjNounStats& stats,
    const Vocabulary& vocab, std::uint64_t rng_seed);

// One negative per requested kind for every eligible caption. In kAdjNoun
// mode a caption is eligible only if it yields an adjective negative, and the
// noun negative swaps the same modified noun.
std::vector<NegativeSample> build_negative_batch(
    const std::vector<TaggedCaption>& batch, NegativeMode mode,
    const AdjNounStats& stats, const Vocabulary& vocab, std::uint64_t rng_seed,
    const SamplerOptions& options = {});

std::string negative_to_json(const NegativeSample& sample);

}  // namespace ctxalign

#endif  // CTXALIGN_NEGATIVES_H_
