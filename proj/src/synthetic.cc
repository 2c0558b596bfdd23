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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"

namespace ctxalign {

using Eigen::MatrixXd;

namespace {

const char* const kClassNames[] = {
    "banana", "car",   "dog",   "horse", "bear",   "zebra", "kite",  "cup",
    "bus",    "apple", "sheep", "train", "bottle", "chair", "clock", "boat"};

const char* const kAttributeNames[] = {
    "yellow", "green",  "red",   "blue",   "brown", "white",
    "black",  "orange", "purple", "pink", "gray",  "striped"};

const char* const kColorWords[] = {"yellow", "green", "red",    "blue",
                                   "brown",  "white", "black",  "orange",
                                   "purple", "pink",  "gray"};

std::string class_name(int k) {
  constexpr int n = sizeof(kClassNames) / sizeof(kClassNames[0]);
  return k < n ? kClassNames[k] : "object" + std::to_string(k);
}

std::string attribute_name(int a) {
  constexpr int n = sizeof(kAttributeNames) / sizeof(kAttributeNames[0]);
  return a < n ? kAttributeNames[a] : "shade" + std::to_string(a);
}

constexpr double kIndependentShare = 0.5;

struct Placement {
  int row = 0, col = 0, h = 1, w = 1;
};

bool touches(const Placement& a, const Placement& b) {
  // Objects keep at least one empty cell between them.
  return a.row <= b.row + b.h && b.row <= a.row + a.h && a.col <= b.col + b.w &&
         b.col <= a.col + a.w;
}

}  // namespace

void validate_spec(const SyntheticSpec& spec) {
  if (spec.n_classes < 2) throw Error("synthetic spec needs at least 2 classes");
  if (spec.n_attributes < 1) throw Error("synthetic spec needs an attribute");
  if (spec.attribute_effect < 0 || spec.attribute_effect > 1) {
    throw Error("attribute_effect must lie in [0, 1]");
  }
  if (spec.n_scenes < 0 || spec.feature_dim <= 0 || spec.grid_h <= 0 ||
      spec.grid_w <= 0) {
    throw Error("synthetic spec sizes must be positive");
  }
  if (spec.min_objects < 1 || spec.max_objects < spec.min_objects) {
    throw Error("synthetic object counts must satisfy 1 <= min <= max");
  }
  if (spec.attributes_per_class < 1 ||
      spec.attributes_per_class > spec.n_attributes) {
    throw Error("attributes_per_class must lie in [1, n_attributes]");
  }
  if (spec.n_base > spec.n_classes) throw Error("n_base exceeds n_classes");
  if (spec.class_similarity < 0 || spec.class_similarity >= 1) {
    throw Error("class_similarity must lie in [0, 1)");
  }
  // Separated 1x1 objects need a 2x2 footprint each.
  const int capacity = ((spec.grid_h + 1) / 2) * ((spec.grid_w + 1) / 2);
  if (capacity < spec.max_objects) {
    throw Error("grid " + std::to_string(spec.grid_h) + "x" +
                std::to_string(spec.grid_w) + " too small for " +
                std::to_string(spec.max_objects) + " objects");
  }
}

SyntheticData generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SyntheticData data;

  // Classes 2m and 2m+1 share part of their prototype.
  MatrixXd prototypes(spec.n_classes, spec.feature_dim);
  for (int i = 0; i < prototypes.size(); ++i) prototypes.data()[i] = normal(rng);
  for (int k = 0; k + 1 < spec.n_classes; k += 2) {
    for (int j = 0; j < spec.feature_dim; ++j) {
      const double shared = normal(rng);
      for (int m : {k, k + 1}) {
        prototypes(m, j) = std::sqrt(1 - spec.class_similarity) * prototypes(m, j) +
                           std::sqrt(spec.class_similarity) * shared;
      }
    }
  }
  // Offsets mix a shared circle with an independent part, so attributes close
  // on the circle look alike.
  MatrixXd circle(2, spec.feature_dim);
  for (int i = 0; i < circle.size(); ++i) circle.data()[i] = normal(rng);
  MatrixXd offsets(spec.n_attributes, spec.feature_dim);
  const double kPi = 3.14159265358979323846;
  for (int a = 0; a < spec.n_attributes; ++a) {
    const double theta = 2 * kPi * a / spec.n_attributes;
    for (int j = 0; j < spec.feature_dim; ++j) {
      offsets(a, j) = std::sqrt(1 - kIndependentShare) *
                          (std::cos(theta) * circle(0, j) +
                           std::sin(theta) * circle(1, j)) +
                      std::sqrt(kIndependentShare) * normal(rng);
    }
  }

  for (int a = 0; a < spec.n_attributes; ++a) {
    data.attributes.push_back(attribute_name(a));
  }
  const int n_base = spec.n_base >= 0 ? spec.n_base : (spec.n_classes * 3) / 4;
  std::vector<std::vector<int>> plausible(spec.n_classes);
  std::vector<int> arc_start(spec.n_classes);
  for (int k = 0; k < spec.n_classes; ++k) {
    const std::string name = class_name(k);
    data.synonyms.push_back({name, {}, {}});
    if (k < n_base) data.base_names.insert(name);
    // A look-alike partner takes the opposite arc.
    const int start =
        k % 2 == 0 ? std::uniform_int_distribution<int>(
                         0, spec.n_attributes - 1)(rng)
                   : (arc_start[k - 1] + spec.n_attributes / 2) %
                         spec.n_attributes;
    arc_start[k] = start;
    std::vector<int> attrs;
    for (int i = 0; i < spec.attributes_per_class; ++i) {
      attrs.push_back((start + i) % spec.n_attributes);
    }
    std::sort(attrs.begin(), attrs.end());
    plausible[k] = attrs;
    std::vector<std::string> names;
    for (int a : attrs) names.push_back(attribute_name(a));
    data.class_attributes.push_back(names);
  }
  for (const char* c : kColorWords) data.categories.color.insert(c);
  data.categories.age = {"old", "young"};
  data.categories.size = {"large", "small", "wide"};
  data.categories.quantity = {"assorted", "few", "many"};

  std::uniform_int_distribution<int> n_objects(spec.min_objects, spec.max_objects);
  std::uniform_int_distribution<int> pick_class(0, spec.n_classes - 1);
  std::uniform_int_distribution<int> pick_extent(1, 2);
  std::uniform_int_distribution<int> pick_surface(0, 2);

  for (int s = 0; s < spec.n_scenes; ++s) {
    SceneGrid scene;
    scene.image_id = "img" + std::to_string(s);
    scene.height_cells = spec.grid_h;
    scene.width_cells = spec.grid_w;
    scene.features.resize(scene.num_cells(), spec.feature_dim);
    for (int i = 0; i < scene.features.size(); ++i) {
      scene.features.data()[i] = spec.noise_sigma * normal(rng);
    }
    scene.gt.assign(scene.num_cells(), CellLabel{});

    const int count = n_objects(rng);
    std::vector<Placement> placed;
    std::vector<std::pair<int, int>> objects;  // (class, attribute)
    for (int o = 0; o < count; ++o) {
      bool ok = false;
      Placement p;
      for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
        p.h = std::min(pick_extent(rng), spec.grid_h);
        p.w = std::min(pick_extent(rng), spec.grid_w);
        if (attempt >= 100) p.h = p.w = 1;
        p.row = std::uniform_int_distribution<int>(0, spec.grid_h - p.h)(rng);
        p.col = std::uniform_int_distribution<int>(0, spec.grid_w - p.w)(rng);
        ok = true;
        for (const auto& q : placed) ok = ok && !touches(p, q);
      }
      if (!ok) {
        if (o < spec.min_objects) {
          throw Error("could not place " + std::to_string(spec.min_objects) +
                      " objects on a " + std::to_string(spec.grid_h) + "x" +
                      std::to_string(spec.grid_w) + " grid");
        }
        break;
      }
      placed.push_back(p);
      const int cls = pick_class(rng);
      const auto& attrs = plausible[cls];
      const int attr = attrs[std::uniform_int_distribution<std::size_t>(
          0, attrs.size() - 1)(rng)];
      objects.emplace_back(cls, attr);
      for (int r = p.row; r < p.row + p.h; ++r) {
        for (int c = p.col; c < p.col + p.w; ++c) {
          const int cell = scene.cell_index(r, c);
          scene.features.row(cell) += prototypes.row(cls) +
                                      spec.attribute_effect * offsets.row(attr);
          scene.gt[cell] = {class_name(cls), attribute_name(attr)};
        }
      }
    }

    const std::string adj = attribute_name(objects.front().second);
    const std::string noun = class_name(objects.front().first);
    const std::string surface = kSurfaceNouns[pick_surface(rng)];
    const bool vowel = std::string("aeiou").find(adj.front()) != std::string::npos;
    TaggedCaption caption;
    caption.caption_id = "cap" + std::to_string(s);
    caption.image_id = scene.image_id;
    caption.tokens = {
        {vowel ? "an" : "a", Pos::kDet, 2, "det"},
        {adj, Pos::kAdj, 2, "amod"},
        {noun, Pos::kNoun, 2, "root"},
        {"on", Pos::kPrep, 2, "prep"},
        {"the", Pos::kDet, 5, "det"},
        {surface, Pos::kNoun, 3, "pobj"},
    };
    caption.phrases = {{PhraseKind::kPP, 3, 6}};
    data.corpus.push_back(std::move(caption));
    data.scenes.push_back(std::move(scene));
  }
  return data;
}

void write_synthetic(const SyntheticData& data,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_scenes(dir / "scenes.jsonl", data.scenes);
  save_corpus(dir / "corpus.jsonl", data.corpus);
  save_synonyms(dir / "synonyms.json", data.synonyms);
  {
    std::ofstream out(dir / "base_classes.json");
    out << nlohmann::json(data.base_names).dump() << '\n';
  }
  {
    nlohmann::json j;
    j["color"] = data.categories.color;
    j["age"] = data.categories.age;
    j["size"] = data.categories.size;
    j["quantity"] = data.categories.quantity;
    std::ofstream out(dir / "categories.json");
    out << j.dump(2) << '\n';
  }
}

}  // namespace ctxalign
