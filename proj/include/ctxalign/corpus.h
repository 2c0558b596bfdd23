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

#ifndef CTXALIGN_CORPUS_H_
#define CTXALIGN_CORPUS_H_

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ctxalign {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorpusError : public Error {
 public:
  using Error::Error;
};

enum class Pos { kNoun, kAdj, kVerb, kPrep, kDet, kOther };

std::string_view to_string(Pos pos);
// Accepts the six coarse tags, case-insensitively.
Pos parse_pos(std::string_view tag);

struct Token {
  std::string text;
  Pos pos = Pos::kOther;
  int head = 0;  // self index for the root
  std::string deprel;

  bool operator==(const Token&) const = default;
};

enum class PhraseKind { kPP, kVP };

struct Phrase {
  PhraseKind kind = PhraseKind::kPP;
  int begin = 0;  // [begin, end) in token indices
  int end = 0;

  bool operator==(const Phrase&) const = default;
};

struct TaggedCaption {
  std::string caption_id;
  std::string image_id;
  std::vector<Token> tokens;
  std::vector<Phrase> phrases;

  int size() const { return static_cast<int>(tokens.size()); }
  std::string text() const;
  bool operator==(const TaggedCaption&) const = default;
};

// Throws CorpusError naming the caption when an invariant is broken.
void validate_caption(const TaggedCaption& caption);

// One JSON object per line. Lines are lowercased, punctuation is forced to
// Pos::kOther. All malformed lines are collected into a single CorpusError
// that cites line numbers and caption ids.
std::vector<TaggedCaption> load_corpus(const std::filesystem::path& path);
TaggedCaption parse_caption_json(std::string_view line);
std::string caption_to_json(const TaggedCaption& caption);
void save_corpus(const std::filesystem::path& path,
                 const std::vector<TaggedCaption>& corpus);

// ---------------------------------------------------------------------------
// Vocabulary

struct VocabClass {
  std::string name;
  std::set<std::string> synonyms;  // includes the canonical name
  bool is_base = false;
};

struct SynonymEntry {
  std::string name;
  std::vector<std::string> synonyms;
  std::map<std::string, std::string> irregular_plurals;
};

class Vocabulary {
 public:
  Vocabulary() = default;

  const std::vector<VocabClass>& classes() const { return classes_; }
  const std::map<std::string, int>& term_index() const { return term_index_; }
  int num_classes() const { return static_cast<int>(classes_.size()); }

  // Canonical class index for a (possibly multi-word, space separated) term.
  std::optional<int> lookup(std::string_view term) const;
  std::optional<int> class_index(std::string_view canonical_name) const;
  bool contains(std::string_view term) const { return lookup(term).has_value(); }
  // Longest term length in tokens.
  int max_term_tokens() const { return max_term_tokens_; }

  std::vector<std::string> base_names() const;
  std::vector<std::string> target_names() const;
  // Every term of a class, singular and plural.
  std::vector<std::string> terms_of(int class_index) const;

  friend Vocabulary build_vocabulary(const std::vector<SynonymEntry>&,
                                     const std::set<std::string>&);

 private:
  std::vector<VocabClass> classes_;
  std::map<std::string, int> term_index_;
  int max_term_tokens_ = 0;
};

// Rule-based English plural of the last word of `term`.
std::string pluralize(std::string_view term);

std::vector<SynonymEntry> load_synonyms(const std::filesystem::path& path);
void save_synonyms(const std::filesystem::path& path,
                   const std::vector<SynonymEntry>& entries);

// Throws CorpusError when a term would map to two classes.
Vocabulary build_vocabulary(const std::vector<SynonymEntry>& entries,
                            const std::set<std::string>& base_names);
Vocabulary build_vocabulary(const std::filesystem::path& synonym_file,
                            const std::set<std::string>& base_names);

// A vocabulary term found in a caption. Multi-token terms are matched
// greedily left to right and behave as one noun whose head is `head`.
struct TermMatch {
  int begin = 0;
  int end = 0;
  int head = 0;
  int class_index = 0;
};

std::vector<TermMatch> match_terms(const TaggedCaption& caption,
                                   const Vocabulary& vocab);
// Per token: index into the match list, or -1.
std::vector<int> term_membership(const TaggedCaption& caption,
                                 const std::vector<TermMatch>& matches);

// ---------------------------------------------------------------------------
// Context extraction

struct AdjectiveEdge {
  int adj_index = 0;
  int noun_index = 0;
  std::optional<int> class_index;

  bool operator==(const AdjectiveEdge&) const = default;
};

// Every amod token whose head is a noun. Tokens that are part of a
// vocabulary term are never reported as adjectives.
std::vector<AdjectiveEdge> extract_adjectives(const TaggedCaption& caption,
                                              const Vocabulary& vocab);

std::vector<Phrase> extract_phrases(const TaggedCaption& caption);

enum class ContextKind { kAdj, kPP, kVP };

std::string_view to_string(ContextKind kind);
ContextKind parse_context_kind(std::string_view name);

// Deletes the selected context component. Components that contain a
// vocabulary term or only punctuation are kept. Heads of surviving tokens
// that pointed at deleted tokens are re-pointed transitively.
TaggedCaption remove_context(const TaggedCaption& caption, ContextKind kind,
                             const Vocabulary& vocab);

// Deletes an arbitrary token set and repairs heads and phrase spans.
TaggedCaption delete_tokens(const TaggedCaption& caption,
                            const std::vector<bool>& remove);

// ---------------------------------------------------------------------------
// Adjective statistics

struct AdjNounStats {
  // (canonical noun, adjective) -> count
  std::map<std::pair<std::string, std::string>, int> counts;
  // canonical noun -> sorted adjectives with count > 0
  std::map<std::string, std::vector<std::string>> per_noun_adjs;
  // every amod adjective in the corpus, vocabulary noun or not
  std::map<std::string, int> all_adjectives;

  int count(const std::string& noun, const std::string& adj) const;
  // Total count of `adj` with vocabulary nouns.
  int total_with_vocab(const std::string& adj) const;
};

AdjNounStats compute_adj_noun_stats(const std::vector<TaggedCaption>& corpus,
                                    const Vocabulary& vocab);

enum class AdjCategory { kColor, kAge, kSize, kQuantity, kProperty };

AdjCategory parse_adj_category(std::string_view name);

struct CategoryLists {
  std::set<std::string> color;
  std::set<std::string> age;
  std::set<std::string> size;
  std::set<std::string> quantity;
};

CategoryLists load_category_lists(const std::filesystem::path& path);

inline constexpr int kDefaultMinAdjCount = 10;

// Adjectives of `category` used with vocabulary nouns more than
// `min_count` times. kProperty is every adjective in none of the lists.
std::set<std::string> filter_adjectives_by_category(
    const AdjNounStats& stats, AdjCategory category,
    const CategoryLists& lists, int min_count = kDefaultMinAdjCount);

}  // namespace ctxalign

#endif  // CTXALIGN_CORPUS_H_
