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


#include "ctxalign/synthetic.h"
#include "doctest.h"
#include "test_util.h"

using namespace ctxalign;

TEST_CASE("generation is byte-identical for a fixed seed") {
  const auto a = ctxalign::testing::temp_dir("synth-a");
  const auto b = ctxalign::testing::temp_dir("synth-b");
  write_synthetic(generate_synthetic(SyntheticSpec{}, 17), a);
  write_synthetic(generate_synthetic(SyntheticSpec{}, 17), b);
  for (const char* f : {"scenes.jsonl", "corpus.jsonl", "synonyms.json",
                        "base_classes.json", "categories.json"}) {
    CAPTURE(f);
    const std::string text = ctxalign::testing::read_file(a / f);
    CHECK_FALSE(text.empty());
    CHECK(text == ctxalign::testing::read_file(b / f));
  }
  const auto c = ctxalign::testing::temp_dir("synth-c");
  write_synthetic(generate_synthetic(SyntheticSpec{}, 18), c);
  CHECK(ctxalign::testing::read_file(a / "scenes.jsonl") !=
        ctxalign::testing::read_file(c / "scenes.jsonl"));
}

TEST_CASE("written files pass the loaders") {
  const auto dir = ctxalign::testing::temp_dir("synth-load");
  const SyntheticData data = generate_synthetic(SyntheticSpec{}, 2);
  write_synthetic(data, dir);
  const auto corpus = load_corpus(dir / "corpus.jsonl");
  const auto scenes = load_scenes(dir / "scenes.jsonl");
  const Vocabulary vocab = build_vocabulary(dir / "synonyms.json", data.base_names);
  CHECK(corpus == data.corpus);
  REQUIRE(scenes.size() == data.scenes.size());
  for (const auto& s : scenes) CHECK_NOTHROW(validate_scene(s, &vocab));
  CHECK(load_category_lists(dir / "categories.json").color == data.categories.color);
}

TEST_CASE("every caption has exactly one adjective on a vocabulary noun") {
  const SyntheticData data = generate_synthetic(SyntheticSpec{}, 4);
  const Vocabulary vocab = build_vocabulary(data.synonyms, data.base_names);
  REQUIRE(data.corpus.size() == 200);
  for (std::size_t i = 0; i < data.corpus.size(); ++i) {
    const TaggedCaption& c = data.corpus[i];
    CHECK(c.image_id == data.scenes[i].image_id);
    const auto edges = extract_adjectives(c, vocab);
    REQUIRE(edges.size() == 1);
    REQUIRE(edges[0].class_index);
    const std::string cls = vocab.classes()[*edges[0].class_index].name;
    const std::string adj = c.tokens[edges[0].adj_index].text;
    // The caption describes a real object of the scene.
    bool found = false;
    for (const auto& obj : gt_objects(data.scenes[i])) {
      found = found || (obj.cls == cls && obj.attr == adj);
    }
    CHECK(found);
    CHECK(match_terms(c, vocab).size() == 1);
    CHECK(c.phrases == std::vector<Phrase>{{PhraseKind::kPP, 3, 6}});
  }
}

TEST_CASE("planted structure") {
  SyntheticSpec spec;
  const SyntheticData data = generate_synthetic(spec, 5);
  CHECK(data.base_names.size() == 6);
  CHECK(data.attributes.size() == 4);
  REQUIRE(data.class_attributes.size() == 8);
  for (const auto& attrs : data.class_attributes) CHECK(attrs.size() == 2);
  // Look-alike partners never share a plausible attribute.
  for (int k = 0; k + 1 < 8; k += 2) {
    for (const auto& a : data.class_attributes[k]) {
      const auto& other = data.class_attributes[k + 1];
      CHECK(std::find(other.begin(), other.end(), a) == other.end());
    }
  }
  for (const auto& scene : data.scenes) {
    CHECK(scene.features.cols() == spec.feature_dim);
    const auto objects = gt_objects(scene);
    CHECK(objects.size() >= 1);
    CHECK(objects.size() <= 3);
    for (const auto& obj : objects) {
      const auto k = std::find_if(data.synonyms.begin(), data.synonyms.end(),
                                  [&](const SynonymEntry& e) { return e.name == obj.cls; }) -
                     data.synonyms.begin();
      const auto& attrs = data.class_attributes[k];
      CHECK(std::find(attrs.begin(), attrs.end(), obj.attr) != attrs.end());
    }
  }
}

TEST_CASE("spec validation") {
  SyntheticSpec tiny;
  tiny.grid_h = 2;
  tiny.grid_w = 2;
  tiny.max_objects = 2;
  CHECK_THROWS_AS(generate_synthetic(tiny, 1), Error);
  tiny.max_objects = 1;
  tiny.min_objects = 1;
  CHECK_NOTHROW(generate_synthetic(tiny, 1));
  SyntheticSpec bad;
  bad.attribute_effect = 1.5;
  CHECK_THROWS_AS(validate_spec(bad), Error);
  bad = {};
  bad.attributes_per_class = 5;
  CHECK_THROWS_AS(validate_spec(bad), Error);
  bad = {};
  bad.class_similarity = 1.0;
  CHECK_THROWS_AS(validate_spec(bad), Error);
  bad = {};
  bad.n_base = 9;
  CHECK_THROWS_AS(validate_spec(bad), Error);
}

TEST_CASE("more classes and attributes than the name tables") {
  SyntheticSpec spec;
  spec.n_classes = 20;
  spec.n_attributes = 14;
  spec.n_scenes = 10;
  const SyntheticData data = generate_synthetic(spec, 1);
  CHECK(data.synonyms.back().name == "object19");
  CHECK(data.attributes.back() == "shade13");
}
