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

#include "ctxalign/corpus.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ctxalign {

using json = nlohmann::json;

namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool is_punctuation(std::string_view text) {
  return !text.empty() &&
         std::all_of(text.begin(), text.end(),
                     [](unsigned char c) { return std::ispunct(c) != 0; });
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::string join(const std::vector<Token>& tokens, int begin, int end) {
  std::string out;
  for (int i = begin; i < end; ++i) {
    if (i > begin) out += ' ';
    out += tokens[i].text;
  }
  return out;
}

std::string_view to_string(PhraseKind kind) {
  return kind == PhraseKind::kPP ? "pp" : "vp";
}

}  // namespace

std::string_view to_string(Pos pos) {
  switch (pos) {
    case Pos::kNoun: return "noun";
    case Pos::kAdj: return "adj";
    case Pos::kVerb: return "verb";
    case Pos::kPrep: return "prep";
    case Pos::kDet: return "det";
    case Pos::kOther: return "other";
  }
  return "other";
}

Pos parse_pos(std::string_view tag) {
  const std::string t = lowercase(tag);
  if (t == "noun") return Pos::kNoun;
  if (t == "adj") return Pos::kAdj;
  if (t == "verb") return Pos::kVerb;
  if (t == "prep") return Pos::kPrep;
  if (t == "det") return Pos::kDet;
  if (t == "other") return Pos::kOther;
  throw CorpusError("unknown part-of-speech tag '" + std::string(tag) + "'");
}

std::string TaggedCaption::text() const { return join(tokens, 0, size()); }

void validate_caption(const TaggedCaption& caption) {
  const auto fail = [&](const std::string& why) {
    throw CorpusError("caption '" + caption.caption_id + "': " + why);
  };
  const int n = caption.size();
  for (int i = 0; i < n; ++i) {
    const Token& tok = caption.tokens[i];
    if (tok.text.empty()) fail("token " + std::to_string(i) + " is empty");
    if (std::any_of(tok.text.begin(), tok.text.end(),
                    [](unsigned char c) { return std::isspace(c) != 0; })) {
      fail("token " + std::to_string(i) + " contains whitespace");
    }
    if (tok.head < 0 || tok.head >= n) {
      fail("token " + std::to_string(i) + " has head " +
           std::to_string(tok.head) + " outside [0, " + std::to_string(n) +
           ")");
    }
  }
  for (const Phrase& p : caption.phrases) {
    if (p.begin < 0 || p.end > n || p.begin >= p.end) {
      fail("phrase span [" + std::to_string(p.begin) + ", " +
           std::to_string(p.end) + ") invalid for " + std::to_string(n) +
           " tokens");
    }
  }
}

TaggedCaption parse_caption_json(std::string_view line) {
  json j = json::parse(line);  // throws json::parse_error
  TaggedCaption c;
  if (!j.is_object()) throw CorpusError("line is not a JSON object");
  if (j.contains("caption_id") && j["caption_id"].is_string()) {
    c.caption_id = j["caption_id"].get<std::string>();
  }
  const auto require = [&](const char* key) -> const json& {
    if (!j.contains(key)) {
      throw CorpusError("caption '" + c.caption_id + "': missing field '" +
                        key + "'");
    }
    return j[key];
  };
  if (!j.contains("caption_id") || !j["caption_id"].is_string()) {
    throw CorpusError("missing or non-string field 'caption_id'");
  }
  c.image_id = require("image_id").get<std::string>();
  const json& toks = require("tokens");
  if (!toks.is_array()) {
    throw CorpusError("caption '" + c.caption_id + "': 'tokens' not an array");
  }
  for (const json& t : toks) {
    Token tok;
    try {
      tok.text = lowercase(t.at("text").get<std::string>());
      tok.pos = parse_pos(t.at("pos").get<std::string>());
      tok.head = t.at("head").get<int>();
      tok.deprel = t.at("deprel").get<std::string>();
    } catch (const json::exception& e) {
      throw CorpusError("caption '" + c.caption_id + "': bad token: " +
                        e.what());
    } catch (const CorpusError& e) {
      throw CorpusError("caption '" + c.caption_id + "': " + e.what());
    }
    if (is_punctuation(tok.text)) tok.pos = Pos::kOther;
    c.tokens.push_back(std::move(tok));
  }
  if (j.contains("phrases")) {
    for (const json& p : j["phrases"]) {
      Phrase ph;
      try {
        const std::string kind = lowercase(p.at("kind").get<std::string>());
        if (kind == "pp") {
          ph.kind = PhraseKind::kPP;
        } else if (kind == "vp") {
          ph.kind = PhraseKind::kVP;
        } else {
          throw CorpusError("unknown phrase kind '" + kind + "'");
        }
        const auto& span = p.at("span");
        if (!span.is_array() || span.size() != 2) {
          throw CorpusError("phrase span must be [begin, end]");
        }
        ph.begin = span[0].get<int>();
        ph.end = span[1].get<int>();
      } catch (const json::exception& e) {
        throw CorpusError("caption '" + c.caption_id + "': bad phrase: " +
                          e.what());
      } catch (const CorpusError& e) {
        throw CorpusError("caption '" + c.caption_id + "': " + e.what());
      }
      c.phrases.push_back(ph);
    }
  }
  validate_caption(c);
  return c;
}

std::string caption_to_json(const TaggedCaption& caption) {
  json j;
  j["caption_id"] = caption.caption_id;
  j["image_id"] = caption.image_id;
  j["tokens"] = json::array();
  for (const Token& t : caption.tokens) {
    j["tokens"].push_back({{"text", t.text},
                           {"pos", std::string(to_string(t.pos))},
                           {"head", t.head},
                           {"deprel", t.deprel}});
  }
  j["phrases"] = json::array();
  for (const Phrase& p : caption.phrases) {
    j["phrases"].push_back({{"kind", std::string(to_string(p.kind))},
                            {"span", {p.begin, p.end}}});
  }
  return j.dump();
}

std::vector<TaggedCaption> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file " + path.string());
  std::vector<TaggedCaption> corpus;
  std::vector<std::string> problems;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      corpus.push_back(parse_caption_json(line));
    } catch (const std::exception& e) {
      problems.push_back(path.string() + ":" + std::to_string(line_no) + ": " +
                         e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = "malformed corpus lines:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw CorpusError(msg);
  }
  return corpus;
}

void save_corpus(const std::filesystem::path& path,
                 const std::vector<TaggedCaption>& corpus) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write corpus file " + path.string());
  for (const auto& c : corpus) out << caption_to_json(c) << '\n';
}

// ---------------------------------------------------------------------------
// Vocabulary

std::string pluralize(std::string_view term) {
  std::string t(term);
  if (t.empty()) return t;
  const auto ends_with = [&](std::string_view suffix) {
    return t.size() >= suffix.size() &&
           t.compare(t.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with("s") || ends_with("x") || ends_with("z") || ends_with("ch") ||
      ends_with("sh")) {
    return t + "es";
  }
  if (t.size() >= 2 && t.back() == 'y') {
    const char prev = t[t.size() - 2];
    if (std::string_view("aeiou").find(prev) == std::string_view::npos) {
      return t.substr(0, t.size() - 1) + "ies";
    }
  }
  return t + "s";
}

std::optional<int> Vocabulary::lookup(std::string_view term) const {
  auto it = term_index_.find(std::string(term));
  if (it == term_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> Vocabulary::class_index(std::string_view name) const {
  for (int i = 0; i < num_classes(); ++i) {
    if (classes_[i].name == name) return i;
  }
  return std::nullopt;
}

std::vector<std::string> Vocabulary::base_names() const {
  std::vector<std::string> out;
  for (const auto& c : classes_) {
    if (c.is_base) out.push_back(c.name);
  }
  return out;
}

std::vector<std::string> Vocabulary::target_names() const {
  std::vector<std::string> out;
  for (const auto& c : classes_) {
    if (!c.is_base) out.push_back(c.name);
  }
  return out;
}

std::vector<std::string> Vocabulary::terms_of(int class_index) const {
  std::vector<std::string> out;
  for (const auto& [term, idx] : term_index_) {
    if (idx == class_index) out.push_back(term);
  }
  return out;
}

std::vector<SynonymEntry> load_synonyms(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open synonym file " + path.string());
  const std::string content((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  std::vector<SynonymEntry> entries;
  if (content.find_first_not_of(" \t\r\n") == std::string::npos) {
    return entries;
  }
  try {
    const json j = json::parse(content);
    for (const json& e : j) {
      SynonymEntry entry;
      entry.name = e.at("name").get<std::string>();
      if (e.contains("synonyms")) {
        entry.synonyms = e["synonyms"].get<std::vector<std::string>>();
      }
      if (e.contains("irregular_plurals")) {
        entry.irregular_plurals =
            e["irregular_plurals"].get<std::map<std::string, std::string>>();
      }
      entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw CorpusError("synonym file " + path.string() + ": " + e.what());
  }
  return entries;
}

void save_synonyms(const std::filesystem::path& path,
                   const std::vector<SynonymEntry>& entries) {
  json j = json::array();
  for (const auto& e : entries) {
    j.push_back({{"name", e.name},
                 {"synonyms", e.synonyms},
                 {"irregular_plurals", e.irregular_plurals}});
  }
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write synonym file " + path.string());
  out << j.dump(2) << '\n';
}

Vocabulary build_vocabulary(const std::vector<SynonymEntry>& entries,
                            const std::set<std::string>& base_names) {
  Vocabulary vocab;
  std::set<std::string> seen_names;
  const auto add_term = [&](const std::string& term, int cls) {
    auto [it, inserted] = vocab.term_index_.emplace(term, cls);
    if (!inserted && it->second != cls) {
      throw CorpusError("term '" + term + "' listed under both '" +
                        vocab.classes_[it->second].name + "' and '" +
                        vocab.classes_[cls].name + "'");
    }
    vocab.max_term_tokens_ = std::max(
        vocab.max_term_tokens_, static_cast<int>(split_words(term).size()));
  };
  for (const auto& entry : entries) {
    const std::string name = lowercase(entry.name);
    if (!seen_names.insert(name).second) {
      throw CorpusError("class '" + name + "' listed twice");
    }
    const int cls = vocab.num_classes();
    VocabClass vc;
    vc.name = name;
    vc.is_base = base_names.count(name) > 0;
    vc.synonyms.insert(name);
    for (const auto& s : entry.synonyms) vc.synonyms.insert(lowercase(s));
    vocab.classes_.push_back(vc);
    for (const auto& term : vc.synonyms) {
      add_term(term, cls);
      auto irregular = entry.irregular_plurals.find(term);
      add_term(irregular != entry.irregular_plurals.end()
                   ? lowercase(irregular->second)
                   : pluralize(term),
               cls);
    }
  }
  for (const auto& b : base_names) {
    if (!seen_names.count(lowercase(b))) {
      throw CorpusError("base class '" + b + "' not in synonym file");
    }
  }
  return vocab;
}

Vocabulary build_vocabulary(const std::filesystem::path& synonym_file,
                            const std::set<std::string>& base_names) {
  return build_vocabulary(load_synonyms(synonym_file), base_names);
}

std::vector<TermMatch> match_terms(const TaggedCaption& caption,
                                   const Vocabulary& vocab) {
  std::vector<TermMatch> matches;
  const int n = caption.size();
  int i = 0;
  while (i < n) {
    bool found = false;
    for (int len = std::min(vocab.max_term_tokens(), n - i); len >= 1; --len) {
      auto cls = vocab.lookup(join(caption.tokens, i, i + len));
      if (!cls) continue;
      TermMatch m{i, i + len, i + len - 1, *cls};
      // The span head is the token whose own head leaves the span.
      for (int k = i + len - 1; k >= i; --k) {
        const int h = caption.tokens[k].head;
        if (h == k || h < i || h >= i + len) {
          m.head = k;
          break;
        }
      }
      matches.push_back(m);
      i += len;
      found = true;
      break;
    }
    if (!found) ++i;
  }
  return matches;
}

std::vector<int> term_membership(const TaggedCaption& caption,
                                 const std::vector<TermMatch>& matches) {
  std::vector<int> member(caption.tokens.size(), -1);
  for (int m = 0; m < static_cast<int>(matches.size()); ++m) {
    for (int k = matches[m].begin; k < matches[m].end; ++k) member[k] = m;
  }
  return member;
}

// ---------------------------------------------------------------------------
// Context extraction

std::vector<AdjectiveEdge> extract_adjectives(const TaggedCaption& caption,
                                              const Vocabulary& vocab) {
  const auto matches = match_terms(caption, vocab);
  const auto member = term_membership(caption, matches);
  std::vector<AdjectiveEdge> edges;
  for (int i = 0; i < caption.size(); ++i) {
    const Token& tok = caption.tokens[i];
    if (tok.deprel != "amod" || tok.head == i) continue;
    if (caption.tokens[tok.head].pos != Pos::kNoun) continue;
    if (member[i] >= 0) continue;
    AdjectiveEdge edge{i, tok.head, std::nullopt};
    if (member[tok.head] >= 0) {
      edge.class_index = matches[member[tok.head]].class_index;
    }
    edges.push_back(edge);
  }
  return edges;
}

std::vector<Phrase> extract_phrases(const TaggedCaption& caption) {
  return caption.phrases;
}

std::string_view to_string(ContextKind kind) {
  switch (kind) {
    case ContextKind::kAdj: return "adj";
    case ContextKind::kPP: return "pp";
    case ContextKind::kVP: return "vp";
  }
  return "adj";
}

ContextKind parse_context_kind(std::string_view name) {
  const std::string n = lowercase(name);
  if (n == "adj") return ContextKind::kAdj;
  if (n == "pp") return ContextKind::kPP;
  if (n == "vp") return ContextKind::kVP;
  throw CorpusError("unknown context kind '" + std::string(name) + "'");
}

TaggedCaption delete_tokens(const TaggedCaption& caption,
                            const std::vector<bool>& remove) {
  const int n = caption.size();
  std::vector<int> new_index(n, -1);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    if (!remove[i]) new_index[i] = next++;
  }
  TaggedCaption out;
  out.caption_id = caption.caption_id;
  out.image_id = caption.image_id;
  for (int i = 0; i < n; ++i) {
    if (remove[i]) continue;
    Token tok = caption.tokens[i];
    int h = tok.head;
    // Walk up through deleted ancestors; a deleted root leaves us a root.
    for (int guard = 0; remove[h] && guard <= n; ++guard) {
      const int up = caption.tokens[h].head;
      if (up == h) break;
      h = up;
    }
    tok.head = remove[h] ? new_index[i] : new_index[h];
    out.tokens.push_back(std::move(tok));
  }
  for (const Phrase& p : caption.phrases) {
    int first = -1, last = -1;
    for (int k = p.begin; k < p.end; ++k) {
      if (remove[k]) continue;
      if (first < 0) first = new_index[k];
      last = new_index[k];
    }
    if (first >= 0) out.phrases.push_back({p.kind, first, last + 1});
  }
  return out;
}

namespace {

// Tokens whose head chain passes through `root` (excluding `root`).
std::vector<int> descendants(const TaggedCaption& caption, int root) {
  std::vector<int> out;
  const int n = caption.size();
  for (int k = 0; k < n; ++k) {
    if (k == root) continue;
    int h = k;
    for (int guard = 0; guard <= n; ++guard) {
      const int up = caption.tokens[h].head;
      if (up == h) break;
      h = up;
      if (h == root) {
        out.push_back(k);
        break;
      }
    }
  }
  return out;
}

}  // namespace

TaggedCaption remove_context(const TaggedCaption& caption, ContextKind kind,
                             const Vocabulary& vocab) {
  const auto matches = match_terms(caption, vocab);
  const auto member = term_membership(caption, matches);
  std::vector<bool> remove(caption.tokens.size(), false);
  const auto mark = [&](const std::vector<int>& component) {
    for (int k : component) {
      if (member[k] >= 0) return;
    }
    for (int k : component) {
      if (!is_punctuation(caption.tokens[k].text)) remove[k] = true;
    }
  };
  if (kind == ContextKind::kAdj) {
    for (const auto& edge : extract_adjectives(caption, vocab)) {
      std::vector<int> component = descendants(caption, edge.adj_index);
      component.push_back(edge.adj_index);
      mark(component);
    }
  } else {
    const PhraseKind want =
        kind == ContextKind::kPP ? PhraseKind::kPP : PhraseKind::kVP;
    for (const Phrase& p : caption.phrases) {
      if (p.kind != want) continue;
      std::vector<int> component;
      for (int k = p.begin; k < p.end; ++k) component.push_back(k);
      mark(component);
    }
  }
  if (std::none_of(remove.begin(), remove.end(), [](bool b) { return b; })) {
    return caption;
  }
  return delete_tokens(caption, remove);
}

// ---------------------------------------------------------------------------
// Statistics

int AdjNounStats::count(const std::string& noun, const std::string& adj) const {
  auto it = counts.find({noun, adj});
  return it == counts.end() ? 0 : it->second;
}

int AdjNounStats::total_with_vocab(const std::string& adj) const {
  int total = 0;
  for (const auto& [key, c] : counts) {
    if (key.second == adj) total += c;
  }
  return total;
}

AdjNounStats compute_adj_noun_stats(const std::vector<TaggedCaption>& corpus,
                                    const Vocabulary& vocab) {
  AdjNounStats stats;
  for (const auto& caption : corpus) {
    for (const auto& edge : extract_adjectives(caption, vocab)) {
      const std::string& adj = caption.tokens[edge.adj_index].text;
      ++stats.all_adjectives[adj];
      if (!edge.class_index) continue;
      ++stats.counts[{vocab.classes()[*edge.class_index].name, adj}];
    }
  }
  for (const auto& [key, c] : stats.counts) {
    if (c > 0) stats.per_noun_adjs[key.first].push_back(key.second);
  }
  return stats;
}

AdjCategory parse_adj_category(std::string_view name) {
  const std::string n = lowercase(name);
  if (n == "color") return AdjCategory::kColor;
  if (n == "age") return AdjCategory::kAge;
  if (n == "size") return AdjCategory::kSize;
  if (n == "quantity") return AdjCategory::kQuantity;
  if (n == "property") return AdjCategory::kProperty;
  throw CorpusError("unknown adjective category '" + std::string(name) + "'");
}

CategoryLists load_category_lists(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open category file " + path.string());
  CategoryLists lists;
  try {
    const json j = json::parse(in);
    const auto read = [&](const char* key, std::set<std::string>& dst) {
      if (!j.contains(key)) return;
      for (const auto& w : j[key]) dst.insert(lowercase(w.get<std::string>()));
    };
    read("color", lists.color);
    read("age", lists.age);
    read("size", lists.size);
    read("quantity", lists.quantity);
  } catch (const json::exception& e) {
    throw CorpusError("category file " + path.string() + ": " + e.what());
  }
  return lists;
}

std::set<std::string> filter_adjectives_by_category(const AdjNounStats& stats,
                                                    AdjCategory category,
                                                    const CategoryLists& lists,
                                                    int min_count) {
  std::map<std::string, int> totals;
  for (const auto& [key, c] : stats.counts) totals[key.second] += c;
  const auto in_category = [&](const std::string& adj) {
    switch (category) {
      case AdjCategory::kColor: return lists.color.count(adj) > 0;
      case AdjCategory::kAge: return lists.age.count(adj) > 0;
      case AdjCategory::kSize: return lists.size.count(adj) > 0;
      case AdjCategory::kQuantity: return lists.quantity.count(adj) > 0;
      case AdjCategory::kProperty:
        return !lists.color.count(adj) && !lists.age.count(adj) &&
               !lists.size.count(adj) && !lists.quantity.count(adj);
    }
    return false;
  };
  std::set<std::string> out;
  for (const auto& [adj, total] : totals) {
    if (total > min_count && in_category(adj)) out.insert(adj);
  }
  return out;
}

}  // namespace ctxalign
