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

#ifndef CTXALIGN_SCENE_H_
#define CTXALIGN_SCENE_H_

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "ctxalign/corpus.h"

namespace ctxalign {

// Ground-truth label of one grid cell. An empty class means background.
struct CellLabel {
  std::string cls;
  std::string attr;

  bool is_background() const { return cls.empty(); }
  bool operator==(const CellLabel&) const = default;
};

// An image surrogate: a grid of region features, flattened row-major.
struct SceneGrid {
  std::string image_id;
  int height_cells = 0;
  int width_cells = 0;
  Eigen::MatrixXd features;  // (height_cells * width_cells) x d_v
  std::vector<CellLabel> gt;

  int num_cells() const { return height_cells * width_cells; }
  int feature_dim() const { return static_cast<int>(features.cols()); }
  int cell_index(int row, int col) const { return row * width_cells + col; }
};

// Throws Error on a shape mismatch or a non-background class outside `vocab`
// (the vocabulary check is skipped when `vocab` is null).
void validate_scene(const SceneGrid& scene, const Vocabulary* vocab = nullptr);

std::vector<SceneGrid> load_scenes(const std::filesystem::path& path);
void save_scenes(const std::filesystem::path& path,
                 const std::vector<SceneGrid>& scenes);
SceneGrid parse_scene_json(const std::string& line);
std::string scene_to_json(const SceneGrid& scene);

// A labelled object: a 4-connected component of same-class cells, as a
// half-open cell rectangle.
struct GtObject {
  std::string cls;
  std::string attr;
  int row0 = 0, col0 = 0, row1 = 0, col1 = 0;
  std::vector<int> cells;
};

std::vector<GtObject> gt_objects(const SceneGrid& scene);

}  // namespace ctxalign

#endif  // CTXALIGN_SCENE_H_
