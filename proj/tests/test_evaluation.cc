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


#include <random>

#include "ctxalign/evaluation.h"
#include "ctxalign/synthetic.h"
#include "doctest.h"
#include "test_util.h"

using namespace ctxalign;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

GalleryItem item(std::initializer_list<double> v, std::string attr, std::string obj) {
  GalleryItem g;
  g.embedding = VectorXd(v.size());
  int i = 0;
  for (double x : v) g.embedding(i++) = x;
  g.attribute = std::move(attr);
  g.object = std::move(obj);
  return g;
}

RetrievalQuery query(std::initializer_list<double> v, std::string attr, std::string obj) {
  GalleryItem g = item(v, attr, obj);
  return {g.attribute, g.object, g.embedding};
}

}  // namespace

TEST_CASE("iou") {
  CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == 1.0);
  CHECK(iou({0, 0, 2, 2}, {2, 2, 4, 4}) == 0.0);
  CHECK(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  CHECK(iou({0, 0, 4, 4}, {1, 1, 3, 3}) == doctest::Approx(0.25));
}

TEST_CASE("boxes from a similarity map") {
  MatrixXd sim = MatrixXd::Zero(4, 4);
  sim(1, 1) = 12;
  sim(1, 2) = 15;
  const auto boxes = boxes_from_similarity(sim, 10);
  REQUIRE(boxes.size() == 1);
  CHECK(boxes[0].x0 == 32);
  CHECK(boxes[0].y0 == 32);
  CHECK(boxes[0].x1 == 96);
  CHECK(boxes[0].y1 == 64);
  CHECK(boxes[0].score == 15);

  CHECK(boxes_from_similarity(MatrixXd::Zero(4, 4), 10).empty());

  MatrixXd diag = MatrixXd::Zero(3, 3);
  diag(0, 0) = diag(1, 1) = 11;
  CHECK(boxes_from_similarity(diag, 10).size() == 2);
  CHECK(boxes_from_similarity(diag, 10, {32, Connectivity::kEight}).size() == 1);

  // The threshold is inclusive.
  MatrixXd edge = MatrixXd::Zero(2, 2);
  edge(1, 0) = 10;
  const auto e = boxes_from_similarity(edge, 10, {16, Connectivity::kFour});
  REQUIRE(e.size() == 1);
  CHECK(e[0].x0 == 0);
  CHECK(e[0].y0 == 16);
  CHECK(e[0].x1 == 16);
  CHECK(e[0].y1 == 32);
}

TEST_CASE("L-shaped component gets its tight rectangle") {
  MatrixXd sim = MatrixXd::Zero(4, 5);
  sim(0, 4) = 20;
  sim(1, 4) = 20;
  sim(2, 4) = 20;
  sim(2, 3) = 25;
  sim(3, 0) = 30;
  const auto boxes = boxes_from_similarity(sim, 10, {1, Connectivity::kFour});
  REQUIRE(boxes.size() == 2);
  CHECK(boxes[0].x0 == 3);
  CHECK(boxes[0].y0 == 0);
  CHECK(boxes[0].x1 == 5);
  CHECK(boxes[0].y1 == 3);
  CHECK(boxes[0].score == 25);
  CHECK(boxes[1].score == 30);
}

TEST_CASE("ground_word thresholds region-word similarity") {
  MatrixXd regions = MatrixXd::Zero(6, 2);
  regions.row(4) << 3, 4;
  VectorXd word(2);
  word << 2, 2;
  const auto boxes = ground_word(regions, 2, 3, word, 10);
  REQUIRE(boxes.size() == 1);
  CHECK(boxes[0].x0 == 32);
  CHECK(boxes[0].y0 == 32);
  CHECK(boxes[0].score == 14);
  CHECK_THROWS_AS(ground_word(regions, 3, 3, word, 10), Error);
}

TEST_CASE("average precision") {
  CHECK(average_precision({true, false, true}, 2) ==
        doctest::Approx((1.0 + 2.0 / 3.0) / 2).epsilon(1e-12));
  CHECK(average_precision({true, true}, 2) == 1.0);
  CHECK(average_precision({}, 3) == 0.0);
  CHECK(average_precision({false, true}, 1) == 0.5);
  // Interpolation lifts the precision at the second hit.
  CHECK(average_precision({false, true, false, true, true}, 3) ==
        doctest::Approx(0.6));
}

TEST_CASE("AP@30 fixtures") {
  const std::vector<GroundTruthBox> gts = {{"i1", "dog", {0, 0, 64, 64}},
                                           {"i2", "dog", {32, 32, 96, 96}}};
  SUBCASE("correct, wrong, correct") {
    const std::vector<Detection> dets = {
        {"i1", "dog", "c1", {0, 0, 64, 64, 0.9}},
        {"i1", "dog", "c1", {128, 128, 160, 160, 0.8}},
        {"i2", "dog", "c2", {32, 32, 96, 64, 0.7}},
    };
    const ApReport r = evaluate_detections(dets, gts, 30);
    CHECK(r.per_class_ap.at("dog") == doctest::Approx(0.8333333333).epsilon(1e-9));
    CHECK(r.mean_ap == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(r.n_predictions == 3);
    CHECK(r.n_gt == 2);
    REQUIRE(r.per_caption_mean_ap);
    CHECK(*r.per_caption_mean_ap == doctest::Approx(1.0));
  }
  SUBCASE("predictions equal to the ground truth") {
    const std::vector<Detection> dets = {{"i1", "dog", "c1", {0, 0, 64, 64, 0.5}},
                                         {"i2", "dog", "c2", {32, 32, 96, 96, 0.4}}};
    CHECK(evaluate_detections(dets, gts, 30).mean_ap == 1.0);
  }
  SUBCASE("no predictions") {
    const ApReport r = evaluate_detections({}, gts, 30);
    CHECK(r.mean_ap == 0.0);
    CHECK_FALSE(r.per_caption_mean_ap);
  }
  SUBCASE("a GT box is matched once") {
    const std::vector<Detection> dets = {{"i1", "dog", "c1", {0, 0, 64, 64, 0.5}},
                                         {"i1", "dog", "c1", {0, 0, 64, 64, 0.4}}};
    CHECK(evaluate_detections(dets, gts, 30).mean_ap == doctest::Approx(0.5));
  }
  SUBCASE("IoU below t misses") {
    // IoU of 1/7 passes t=10 but not t=30.
    const std::vector<GroundTruthBox> g = {{"i", "cat", {0, 0, 2, 2}}};
    const std::vector<Detection> d = {{"i", "cat", "c", {1, 1, 3, 3, 1.0}}};
    CHECK(evaluate_detections(d, g, 30).mean_ap == 0.0);
    CHECK(evaluate_detections(d, g, 10).mean_ap == 1.0);
  }
  SUBCASE("boxes in another image never match") {
    const std::vector<Detection> d = {{"i2", "dog", "c", {0, 0, 64, 64, 1.0}}};
    CHECK(evaluate_detections(d, {gts[0]}, 30).mean_ap == 0.0);
  }
  SUBCASE("ties keep input order") {
    const std::vector<Detection> d = {{"i1", "dog", "c", {200, 200, 300, 300, 0.5}},
                                      {"i1", "dog", "c", {0, 0, 64, 64, 0.5}}};
    CHECK(evaluate_detections(d, {gts[0]}, 30).mean_ap == 0.5);
  }
  SUBCASE("macro average over classes") {
    std::vector<GroundTruthBox> g = gts;
    g.push_back({"i1", "cat", {64, 0, 128, 64}});
    const std::vector<Detection> d = {{"i1", "dog", "c", {0, 0, 64, 64, 1.0}}};
    const ApReport r = evaluate_detections(d, g, 30);
    CHECK(r.per_class_ap.at("dog") == 0.5);
    CHECK(r.per_class_ap.at("cat") == 0.0);
    CHECK(r.mean_ap == 0.25);
  }
  CHECK_THROWS_AS(evaluate_detections({}, {}, 30), Error);
}

TEST_CASE("gt boxes from scene labels") {
  SceneGrid s;
  s.image_id = "x";
  s.height_cells = 4;
  s.width_cells = 4;
  s.features = MatrixXd::Zero(16, 1);
  s.gt.assign(16, CellLabel{});
  s.gt[s.cell_index(1, 1)] = {"dog", "brown"};
  s.gt[s.cell_index(1, 2)] = {"dog", "brown"};
  const auto boxes = gt_boxes(s, 32);
  REQUIRE(boxes.size() == 1);
  CHECK(boxes[0].box.x0 == 32);
  CHECK(boxes[0].box.y0 == 32);
  CHECK(boxes[0].box.x1 == 96);
  CHECK(boxes[0].box.y1 == 64);
}

TEST_CASE("retrieval fixture") {
  // Query q has its correct item at rank (q + 1) for the first two queries
  // and at rank 5 for the third.
  const std::vector<GalleryItem> gallery = {
      item({5, 0, 0}, "red", "car"),    item({4, 0, 0}, "blue", "car"),
      item({3, 1, 0}, "blue", "bus"),   item({2, 0, 0}, "red", "bus"),
      item({1, 0, 0}, "green", "bus"),
  };
  const std::vector<RetrievalQuery> queries = {
      query({1, 0, 0}, "red", "car"),
      query({1, 0, 0}, "blue", "car"),
      query({1, 0, 0}, "green", "bus"),
  };
  const RetrievalReport r = retrieval_eval(queries, gallery, {1, 2, 5, 10});
  CHECK(r.n_queries == 3);
  CHECK(r.n_gallery == 5);
  CHECK(r.recall.at(1) == doctest::Approx(1.0 / 3.0));
  CHECK(r.recall.at(2) == doctest::Approx(2.0 / 3.0));
  CHECK(r.recall.at(5) == 1.0);
  CHECK(r.precision.at(1) == doctest::Approx(1.0 / 3.0));
  CHECK(r.precision.at(2) == doctest::Approx((0.5 + 0.5 + 0) / 3.0));
  CHECK(r.precision.at(5) == doctest::Approx(0.2));
  CHECK(r.recall.at(10) == 1.0);
  CHECK(r.precision.at(10) == doctest::Approx(0.2));
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("k=10") != std::string::npos);
}

TEST_CASE("retrieval ties go to the lower gallery index") {
  const std::vector<GalleryItem> gallery = {item({1, 0}, "a", "x"), item({1, 0}, "b", "y")};
  const RetrievalReport r = retrieval_eval({query({1, 0}, "b", "y")}, gallery, {1});
  CHECK(r.recall.at(1) == 0.0);
  const RetrievalReport s = retrieval_eval({query({1, 0}, "a", "x")}, gallery, {1});
  CHECK(s.recall.at(1) == 1.0);
}

TEST_CASE("retrieval edge cases") {
  const std::vector<GalleryItem> gallery = {item({1}, "a", "x")};
  CHECK(retrieval_eval({query({1}, "z", "x")}, gallery, {1}).recall.at(1) == 0.0);
  CHECK(retrieval_eval({}, gallery, {1}).recall.at(1) == 0.0);
  CHECK_THROWS_AS(retrieval_eval({}, gallery, {0}), Error);
}

TEST_CASE("recall@k is monotone in k") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> label(0, 2), size(1, 30);
  const char* names[] = {"a", "b", "c"};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<GalleryItem> gallery(size(rng));
    for (auto& g : gallery) {
      g.embedding = ctxalign::testing::random_matrix(4, 1, rng).col(0);
      g.attribute = names[label(rng)];
      g.object = names[label(rng)];
    }
    std::vector<RetrievalQuery> queries(5);
    for (auto& q : queries) {
      q.embedding = ctxalign::testing::random_matrix(4, 1, rng).col(0);
      q.attribute = names[label(rng)];
      q.object = names[label(rng)];
    }
    const RetrievalReport r = retrieval_eval(queries, gallery, {1, 2, 3, 5, 10, 50});
    double prev = 0;
    for (const auto& [k, recall] : r.recall) {
      CHECK(recall >= prev);
      prev = recall;
    }
  }
}

TEST_CASE("region assignment") {
  MatrixXd classes(2, 2);
  classes << 1, 0, 0, 1;
  VectorXd bg(2);
  bg << -1, -1;
  MatrixXd regions(4, 2);
  regions << 2, 0, 0, 2, -1, -1, 1, 1;
  CHECK(assign_regions(regions, classes, bg) == std::vector<int>{0, 1, 2, 0});
  bg << 0.5, 0.5;
  // Classes win ties against the background.
  CHECK(assign_regions(regions, classes, bg) == std::vector<int>{0, 1, 0, 0});
}

TEST_CASE("class sets parse") {
  for (auto set : {ClassSet::kBase, ClassSet::kTarget, ClassSet::kUnion}) {
    CHECK(parse_class_set(to_string(set)) == set);
  }
  CHECK_THROWS_AS(parse_class_set("all"), Error);
}

namespace {

struct Planted {
  SyntheticData data = generate_synthetic(SyntheticSpec{}, 3);
  Vocabulary vocab = build_vocabulary(data.synonyms, data.base_names);
  AdjNounStats stats = compute_adj_noun_stats(data.corpus, vocab);
  EncoderStack enc =
      create_encoder(EncoderDims{}, build_token_inventory(data.corpus, vocab), 3);
};

}  // namespace

TEST_CASE("classification reports") {
  Planted p;
  const auto base = classify_regions(p.data.scenes, p.enc, p.vocab, ClassSet::kBase,
                                     GroundingMode::kContextualized, true);
  CHECK(base.classes.size() == 6);
  CHECK(base.base_mean);
  CHECK_FALSE(base.target_mean);
  CHECK(base.background_accuracy);
  const auto uni = classify_regions(p.data.scenes, p.enc, p.vocab, ClassSet::kUnion,
                                    GroundingMode::kContextualized, true);
  CHECK(uni.classes.size() == 8);
  CHECK(uni.target_mean);
  CHECK(*uni.all_mean >= 0.0);
  CHECK(*uni.all_mean <= 1.0);
  const auto target = classify_regions(p.data.scenes, p.enc, p.vocab, ClassSet::kTarget,
                                       GroundingMode::kContextFree, true);
  CHECK(target.classes.size() == 2);
  CHECK_FALSE(target.base_mean);
}

TEST_CASE("union equals base when there are no target classes") {
  Planted p;
  std::set<std::string> all;
  for (const auto& c : p.vocab.classes()) all.insert(c.name);
  const Vocabulary vocab = build_vocabulary(p.data.synonyms, all);
  const auto base = classify_regions(p.data.scenes, p.enc, vocab, ClassSet::kBase,
                                     GroundingMode::kContextualized, true);
  const auto uni = classify_regions(p.data.scenes, p.enc, vocab, ClassSet::kUnion,
                                    GroundingMode::kContextualized, true);
  CHECK(base.per_class_accuracy == uni.per_class_accuracy);
  CHECK(base.base_mean == uni.all_mean);
  CHECK_THROWS_AS(classify_regions(p.data.scenes, p.enc, vocab, ClassSet::kTarget,
                                   GroundingMode::kContextualized, true),
                  Error);
}

TEST_CASE("classification follows the dominant class embedding") {
  Planted p;
  // Make the vision path the identity onto the first feature axes and pin
  // each class embedding to a feature direction.
  EncoderDims dims;
  dims.n_layers = 0;
  EncoderStack enc = create_encoder(dims, build_token_inventory(p.data.corpus, p.vocab), 0);
  enc.params.vision_w.setZero();
  enc.params.v2l_w.setZero();
  for (int i = 0; i < dims.d_v; ++i) enc.params.vision_w(i, i) = 1;
  for (int i = 0; i < dims.d_v; ++i) enc.params.v2l_w(i, i) = 1;
  SceneGrid s;
  s.image_id = "s";
  s.height_cells = 1;
  s.width_cells = 2;
  s.features = MatrixXd::Zero(2, dims.d_v);
  s.gt = {{"car", "red"}, {"banana", "red"}};
  const auto embs = build_class_embeddings({"car", "banana"}, enc,
                                           GroundingMode::kContextFree, false);
  s.features.row(0) = 10 * embs[0].vector.head(dims.d_v).transpose();
  s.features.row(1) = 10 * embs[1].vector.head(dims.d_v).transpose();
  enc.params.word_table.rightCols(dims.d - dims.d_v).setZero();
  const auto r = classify_regions({s}, enc, p.vocab, ClassSet::kBase,
                                  GroundingMode::kContextFree, false);
  CHECK(r.per_class_accuracy.at("car") == 1.0);
  CHECK(r.per_class_accuracy.at("banana") == 1.0);
}

TEST_CASE("probe scenarios rewrite only adjectives of vocabulary nouns") {
  const auto corpus = ctxalign::testing::fixture_corpus();
  const Vocabulary vocab = ctxalign::testing::fixture_vocab();
  const AdjNounStats stats = compute_adj_noun_stats(corpus, vocab);
  for (const auto& c : corpus) {
    CHECK(apply_scenario(c, ProbeScenario::kAsIs, stats, vocab, 1) == c);
  }
  const TaggedCaption drop = apply_scenario(corpus[3], ProbeScenario::kDropAdj, stats,
                                            vocab, 1);
  CHECK(drop.text() == "a teddy bear sitting on a wooden chair");
  const TaggedCaption plausible =
      apply_scenario(corpus[0], ProbeScenario::kPlausibleChange, stats, vocab, 1);
  CHECK(plausible.size() == corpus[0].size());
  CHECK(stats.count("dog", plausible.tokens[1].text) > 0);
  CHECK(plausible.tokens[1].text != "brown");
  CHECK(apply_scenario(corpus[2], ProbeScenario::kRandomChange, stats, vocab, 1) ==
        corpus[2]);
}

TEST_CASE("probe on an untrained encoder is well formed") {
  Planted p;
  PhraseGroundingConfig config;
  config.th_sim = 0;
  const ProbeReport r = attribute_probe(p.data.corpus, p.data.scenes, p.enc, p.vocab,
                                        p.stats, config);
  for (double v : {r.as_is, r.drop, r.plausible, r.random}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(r.delta_drop() == doctest::Approx(r.drop - r.as_is));
  // AS_IS grounding equals the plain phrase-grounding AP.
  const ApReport as_is = phrase_grounding_ap(p.data.corpus, p.data.scenes, p.enc, p.vocab,
                                             p.stats, ProbeScenario::kAsIs, config);
  CHECK(as_is.mean_ap == r.as_is);
}

TEST_CASE("phrase grounding finds planted objects with an oracle encoder") {
  // One 4x4 scene holding a single dog at cells (1,1)-(1,2).
  const Vocabulary vocab = ctxalign::testing::fixture_vocab();
  EncoderDims dims;
  dims.d = 2;
  dims.d_v = 2;
  dims.d_r = 2;
  dims.n_layers = 0;
  EncoderStack enc = create_encoder(dims, {"a", "dog", "cat"}, 0);
  enc.params.vision_w.setIdentity();
  enc.params.v2l_w.setIdentity();
  enc.params.word_table.row(enc.token_id("dog")) << 10, 0;
  enc.params.word_table.row(enc.token_id("cat")) << 0, 10;
  SceneGrid s;
  s.image_id = "img";
  s.height_cells = 4;
  s.width_cells = 4;
  s.features = MatrixXd::Zero(16, 2);
  s.gt.assign(16, CellLabel{});
  for (int c : {1, 2}) {
    s.features.row(s.cell_index(1, c)) << 2, 0;
    s.gt[s.cell_index(1, c)] = {"dog", ""};
  }
  const TaggedCaption caption = ctxalign::testing::make_caption(
      "c", {{"a", Pos::kDet, 1, "det"}, {"dog", Pos::kNoun, 1, "root"}});
  TaggedCaption with_image = caption;
  with_image.image_id = "img";
  PhraseGroundingConfig config;
  config.mode = GroundingMode::kContextFree;
  const ApReport r = phrase_grounding_ap({with_image}, {s}, enc, vocab, AdjNounStats{},
                                         ProbeScenario::kAsIs, config);
  CHECK(r.mean_ap == 1.0);
  CHECK(r.n_predictions == 1);
  CHECK(r.n_gt == 1);
}

TEST_CASE("retrieval queries and gallery") {
  Planted p;
  const auto gallery = build_gallery(p.data.scenes, p.enc);
  std::size_t n_objects = 0;
  for (const auto& s : p.data.scenes) n_objects += gt_objects(s).size();
  CHECK(gallery.size() == n_objects);
  const auto queries = gallery_queries(gallery, p.enc, GroundingMode::kContextFree);
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& g : gallery) pairs.emplace(g.attribute, g.object);
  CHECK(queries.size() == pairs.size());
  const auto q = make_retrieval_query("red", "car", p.enc, GroundingMode::kContextFree);
  const VectorXd expect = (p.enc.params.word_table.row(p.enc.token_id("red")) +
                           p.enc.params.word_table.row(p.enc.token_id("car")))
                              .transpose() / 2;
  CHECK((q.embedding - expect).norm() == doctest::Approx(0.0));
  const auto filtered =
      gallery_queries(gallery, p.enc, GroundingMode::kContextualized, {"red"});
  for (const auto& fq : filtered) CHECK(fq.attribute == "red");
}
