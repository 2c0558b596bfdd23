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

#include "ctxalign/negatives.h"

#include <algorithm>
#include <random>

#include "json.hpp"

namespace ctxalign {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Salts keep the adjective and noun draws of one caption independent.
constexpr std::uint64_t kAdjSalt = 0x61646a;
constexpr std::uint64_t kNounSalt = 0x6e6f756e;

template <typename T>
const T& pick(const std::vector<T>& items, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dist(0, items.size() - 1);
  return items[dist(rng)];
}

NegativeSample make_sample(const TaggedCaption& caption, SwapKind kind,
                           int index, int noun_index,
                           const std::string& replacement) {
  NegativeSample s;
  s.source_caption_id = caption.caption_id;
  s.kind = kind;
  s.swapped_index = index;
  s.noun_index = noun_index;
  s.original_text = caption.tokens[index].text;
  s.replacement_text = replacement;
  s.caption = caption;
  s.caption.tokens[index].text = replacement;
  return s;
}

}  // namespace

std::string_view to_string(SwapKind kind) {
  return kind == SwapKind::kAdjSwap ? "adj_swap" : "noun_swap";
}

std::string_view to_string(NegativeMode mode) {
  switch (mode) {
    case NegativeMode::kNone: return "none";
    case NegativeMode::kAdj: return "adj";
    case NegativeMode::kNoun: return "noun";
    case NegativeMode::kAdjNoun: return "adj+noun";
    case NegativeMode::kRandomAdj: return "random-adj";
  }
  return "none";
}

NegativeMode parse_negative_mode(std::string_view name) {
  if (name == "none") return NegativeMode::kNone;
  if (name == "adj") return NegativeMode::kAdj;
  if (name == "noun") return NegativeMode::kNoun;
  if (name == "adj+noun") return NegativeMode::kAdjNoun;
  if (name == "random-adj") return NegativeMode::kRandomAdj;
  throw Error("unknown negatives mode '" + std::string(name) + "'");
}

std::uint64_t derive_seed(std::uint64_t rng_seed, std::string_view caption_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : caption_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(rng_seed ^ splitmix64(h));
}

std::optional<NegativeSample> gen_adj_negative(const TaggedCaption& caption,
                                               const AdjNounStats& stats,
                                               const Vocabulary& vocab,
                                               std::uint64_t rng_seed,
                                               const SamplerOptions& options) {
  struct Candidate {
    AdjectiveEdge edge;
    std::vector<std::string> pool;
  };
  std::vector<Candidate> candidates;
  for (const auto& edge : extract_adjectives(caption, vocab)) {
    if (!edge.class_index) continue;
    const std::string& noun = vocab.classes()[*edge.class_index].name;
    auto it = stats.per_noun_adjs.find(noun);
    if (it == stats.per_noun_adjs.end()) continue;
    const std::string& original = caption.tokens[edge.adj_index].text;
    std::vector<std::string> pool;
    for (const auto& adj : it->second) {
      if (adj != original) pool.push_back(adj);
    }
    if (!pool.empty()) candidates.push_back({edge, std::move(pool)});
  }
  if (candidates.empty()) return std::nullopt;
  std::mt19937_64 rng(derive_seed(rng_seed ^ kAdjSalt, caption.caption_id));
  const Candidate& chosen = pick(candidates, rng);
  std::string replacement;
  if (options.frequency_weighted) {
    const std::string& noun = vocab.classes()[*chosen.edge.class_index].name;
    std::vector<double> weights;
    for (const auto& adj : chosen.pool) {
      weights.push_back(stats.count(noun, adj));
    }
    std::discrete_distribution<std::size_t> dist(weights.begin(),
                                                 weights.end());
    replacement = chosen.pool[dist(rng)];
  } else {
    replacement = pick(chosen.pool, rng);
  }
  return make_sample(caption, SwapKind::kAdjSwap, chosen.edge.adj_index,
                     chosen.edge.noun_index, replacement);
}

std::optional<NegativeSample> swap_noun_at(const TaggedCaption& caption,
                                           int noun_index,
                                           const Vocabulary& vocab,
                                           std::uint64_t rng_seed,
                                           const SamplerOptions& options) {
  if (noun_index < 0 || noun_index >= caption.size()) return std::nullopt;
  const std::string& original = caption.tokens[noun_index].text;
  const auto cls = vocab.lookup(original);
  if (!cls || caption.tokens[noun_index].pos != Pos::kNoun) return std::nullopt;
  // Keep grammatical number: singular terms are the synonyms themselves.
  const bool plural = !vocab.classes()[*cls].synonyms.count(original);
  std::vector<std::string> pool;
  if (options.noun_pool == NounPool::kVocab) {
    for (const auto& [term, idx] : vocab.term_index()) {
      if (idx == *cls || term.find(' ') != std::string::npos) continue;
      if (vocab.classes()[idx].synonyms.count(term) == (plural ? 1u : 0u)) {
        continue;
      }
      pool.push_back(term);
    }
  } else {
    for (const auto& noun : options.corpus_nouns) {
      const auto other = vocab.lookup(noun);
      if (other && *other == *cls) continue;
      if (noun == original || noun.find(' ') != std::string::npos) continue;
      pool.push_back(noun);
    }
  }
  if (pool.empty()) return std::nullopt;
  std::mt19937_64 rng(derive_seed(rng_seed ^ kNounSalt, caption.caption_id));
  return make_sample(caption, SwapKind::kNounSwap, noun_index, noun_index,
                     pick(pool, rng));
}

std::optional<NegativeSample> gen_noun_negative(const TaggedCaption& caption,
                                                const Vocabulary& vocab,
                                                std::uint64_t rng_seed,
                                                const SamplerOptions& options) {
  std::vector<int> positions;
  for (const auto& m : match_terms(caption, vocab)) {
    if (m.end - m.begin == 1 && caption.tokens[m.begin].pos == Pos::kNoun) {
      positions.push_back(m.begin);
    }
  }
  if (positions.empty()) return std::nullopt;
  std::mt19937_64 rng(derive_seed(rng_seed, caption.caption_id));
  return swap_noun_at(caption, pick(positions, rng), vocab, rng_seed, options);
}

namespace {

std::optional<NegativeSample> random_adj_swap(
    const TaggedCaption& caption, const std::vector<AdjectiveEdge>& edges,
    const AdjNounStats& stats, std::uint64_t rng_seed) {
  if (edges.empty()) return std::nullopt;
  std::mt19937_64 rng(derive_seed(rng_seed ^ kAdjSalt, caption.caption_id));
  const AdjectiveEdge& edge = pick(edges, rng);
  const std::string& original = caption.tokens[edge.adj_index].text;
  std::vector<std::string> pool;
  for (const auto& [adj, count] : stats.all_adjectives) {
    if (count > 0 && adj != original) pool.push_back(adj);
  }
  if (pool.empty()) return std::nullopt;
  return make_sample(caption, SwapKind::kAdjSwap, edge.adj_index,
                     edge.noun_index, pick(pool, rng));
}

}  // namespace

std::optional<NegativeSample> gen_random_adj_negative(
    const TaggedCaption& caption, const AdjNounStats& stats,
    std::uint64_t rng_seed) {
  std::vector<AdjectiveEdge> edges;
  for (int i = 0; i < caption.size(); ++i) {
    const Token& tok = caption.tokens[i];
    if (tok.deprel == "amod" && tok.head != i &&
        caption.tokens[tok.head].pos == Pos::kNoun) {
      edges.push_back({i, tok.head, std::nullopt});
    }
  }
  return random_adj_swap(caption, edges, stats, rng_seed);
}

std::optional<NegativeSample> gen_random_adj_negative(
    const TaggedCaption& caption, const AdjNounStats& stats,
    const Vocabulary& vocab, std::uint64_t rng_seed) {
  std::vector<AdjectiveEdge> edges;
  for (const auto& edge : extract_adjectives(caption, vocab)) {
    if (edge.class_index) edges.push_back(edge);
  }
  return random_adj_swap(caption, edges, stats, rng_seed);
}

std::vector<NegativeSample> build_negative_batch(
    const std::vector<TaggedCaption>& batch, NegativeMode mode,
    const AdjNounStats& stats, const Vocabulary& vocab, std::uint64_t rng_seed,
    const SamplerOptions& options) {
  std::vector<NegativeSample> out;
  for (const auto& caption : batch) {
    switch (mode) {
      case NegativeMode::kNone:
        break;
      case NegativeMode::kAdj:
        if (auto s = gen_adj_negative(caption, stats, vocab, rng_seed, options)) {
          out.push_back(std::move(*s));
        }
        break;
      case NegativeMode::kNoun:
        if (auto s = gen_noun_negative(caption, vocab, rng_seed, options)) {
          out.push_back(std::move(*s));
        }
        break;
      case NegativeMode::kAdjNoun: {
        auto adj = gen_adj_negative(caption, stats, vocab, rng_seed, options);
        if (!adj) break;
        auto noun =
            swap_noun_at(caption, adj->noun_index, vocab, rng_seed, options);
        out.push_back(std::move(*adj));
        if (noun) out.push_back(std::move(*noun));
        break;
      }
      case NegativeMode::kRandomAdj:
        if (auto s = gen_random_adj_negative(caption, stats, vocab, rng_seed)) {
          out.push_back(std::move(*s));
        }
        break;
    }
  }
  return out;
}

std::string negative_to_json(const NegativeSample& sample) {
  nlohmann::json j = nlohmann::json::parse(caption_to_json(sample.caption));
  nlohmann::json out;
  out["source_caption_id"] = sample.source_caption_id;
  out["kind"] = std::string(to_string(sample.kind));
  out["swapped_index"] = sample.swapped_index;
  out["original_text"] = sample.original_text;
  out["replacement_text"] = sample.replacement_text;
  out["tokens"] = j["tokens"];
  return out.dump();
}

}  // namespace ctxalign
