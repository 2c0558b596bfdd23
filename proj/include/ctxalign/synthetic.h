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

// Planted scenes and captions. Every object class has a feature prototype and
// every attribute a feature offset; an object cell carries
//
//   prototype + attribute_effect * offset + N(0, noise_sigma^2)
//
// and background cells carry noise only. Attribute offsets sit near a circle
// and each class's plausible attributes form a contiguous arc of it, so a
// plausible substitute looks more like the original than a random one.
// Classes come in look-alike pairs with opposite arcs, which makes the
// adjective informative. Each scene gets one caption of the form
// "a <adj> <noun> on the <surface>" describing its first object.

#ifndef CTXALIGN_SYNTHETIC_H_
#define CTXALIGN_SYNTHETIC_H_

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "ctxalign/corpus.h"
#include "ctxalign/scene.h"

namespace ctxalign {

struct SyntheticSpec {
  int n_classes = 8;
  int n_attributes = 4;
  int n_scenes = 200;
  int grid_h = 6;
  int grid_w = 6;
  int feature_dim = 16;
  double noise_sigma = 0.3;
  double attribute_effect = 0.7;
  int min_objects = 1;
  int max_objects = 3;
  // Attributes each class is seen with; the rest are implausible for it.
  int attributes_per_class = 2;
  // Base classes are the first n_base; -1 means three quarters.
  int n_base = -1;
  // Share of the prototype common to classes 2m and 2m+1, in [0, 1).
  double class_similarity = 0.5;
};

void validate_spec(const SyntheticSpec& spec);

struct SyntheticData {
  std::vector<SceneGrid> scenes;
  std::vector<TaggedCaption> corpus;
  std::vector<SynonymEntry> synonyms;
  std::set<std::string> base_names;
  CategoryLists categories;
  // attribute names in offset order; per class, its plausible attributes
  std::vector<std::string> attributes;
  std::vector<std::vector<std::string>> class_attributes;
};

// Deterministic in (spec, seed). Throws Error when the grid cannot hold the
// requested objects.
SyntheticData generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Writes scenes.jsonl, corpus.jsonl, synonyms.json, base_classes.json and
// categories.json into `dir`.
void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);

inline constexpr const char* kSurfaceNouns[] = {"table", "field", "road"};

}  // namespace ctxalign

#endif  // CTXALIGN_SYNTHETIC_H_
