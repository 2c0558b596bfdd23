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

// Shared fixtures for the unit and acceptance tests.

#ifndef CTXALIGN_TESTS_TEST_UTIL_H_
#define CTXALIGN_TESTS_TEST_UTIL_H_

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "ctxalign/corpus.h"
#include "ctxalign/scene.h"
#include "json.hpp"

namespace ctxalign::testing {

inline std::filesystem::path data_path(const std::string& name) {
  return std::filesystem::path(CTXALIGN_TEST_DATA) / name;
}

inline std::vector<TaggedCaption> fixture_corpus() {
  return load_corpus(data_path("fixture_corpus.jsonl"));
}

inline std::set<std::string> fixture_base_names() {
  std::ifstream in(data_path("fixture_base_classes.json"));
  std::set<std::string> names;
  for (const auto& n : nlohmann::json::parse(in)) {
    names.insert(n.get<std::string>());
  }
  return names;
}

inline Vocabulary fixture_vocab() {
  return build_vocabulary(data_path("fixture_synonyms.json"),
                          fixture_base_names());
}

// (text, pos, head, deprel) rows.
using TokenRow = std::tuple<const char*, Pos, int, const char*>;

inline TaggedCaption make_caption(std::string id,
                                  std::initializer_list<TokenRow> rows,
                                  std::vector<Phrase> phrases = {}) {
  TaggedCaption c;
  c.caption_id = id;
  c.image_id = "img-" + id;
  for (const auto& [text, pos, head, deprel] : rows) {
    c.tokens.push_back({text, pos, head, deprel});
  }
  c.phrases = std::move(phrases);
  return c;
}

inline Eigen::MatrixXd random_matrix(int rows, int cols, std::mt19937_64& rng,
                                     double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("ctxalign-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace ctxalign::testing

#endif  // CTXALIGN_TESTS_TEST_UTIL_H_
