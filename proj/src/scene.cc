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

#include "ctxalign/scene.h"

#include <algorithm>
#include <fstream>

#include "json.hpp"

namespace ctxalign {

using json = nlohmann::json;

void validate_scene(const SceneGrid& scene, const Vocabulary* vocab) {
  const auto fail = [&](const std::string& why) {
    throw Error("scene '" + scene.image_id + "': " + why);
  };
  if (scene.height_cells <= 0 || scene.width_cells <= 0) {
    fail("grid must be at least 1x1");
  }
  if (scene.features.rows() != scene.num_cells()) {
    fail("feature rows " + std::to_string(scene.features.rows()) +
         " != h*w = " + std::to_string(scene.num_cells()));
  }
  if (static_cast<int>(scene.gt.size()) != scene.num_cells()) {
    fail("label count does not match grid");
  }
  if (!scene.features.allFinite()) fail("non-finite feature");
  if (vocab) {
    for (const auto& label : scene.gt) {
      if (!label.is_background() && !vocab->class_index(label.cls)) {
        fail("class '" + label.cls + "' not in vocabulary");
      }
    }
  }
}

SceneGrid parse_scene_json(const std::string& line) {
  SceneGrid scene;
  try {
    const json j = json::parse(line);
    scene.image_id = j.at("image_id").get<std::string>();
    scene.height_cells = j.at("h").get<int>();
    scene.width_cells = j.at("w").get<int>();
    const auto& feats = j.at("features");
    if (static_cast<int>(feats.size()) != scene.num_cells()) {
      throw Error("scene '" + scene.image_id + "': expected " +
                  std::to_string(scene.num_cells()) + " feature rows, got " +
                  std::to_string(feats.size()));
    }
    const int dim = feats.empty() ? 0 : static_cast<int>(feats[0].size());
    scene.features.resize(scene.num_cells(), dim);
    for (int r = 0; r < scene.num_cells(); ++r) {
      if (static_cast<int>(feats[r].size()) != dim) {
        throw Error("scene '" + scene.image_id + "': ragged feature rows");
      }
      for (int c = 0; c < dim; ++c) scene.features(r, c) = feats[r][c].get<double>();
    }
    scene.gt.assign(scene.num_cells(), CellLabel{});
    if (j.contains("gt")) {
      for (const auto& g : j["gt"]) {
        const int row = g.at("cell")[0].get<int>();
        const int col = g.at("cell")[1].get<int>();
        if (row < 0 || row >= scene.height_cells || col < 0 ||
            col >= scene.width_cells) {
          throw Error("scene '" + scene.image_id + "': gt cell out of grid");
        }
        CellLabel& label = scene.gt[scene.cell_index(row, col)];
        label.cls = g.at("class").get<std::string>();
        label.attr = g.value("attr", "");
      }
    }
  } catch (const json::exception& e) {
    throw Error("scene '" + scene.image_id + "': " + e.what());
  }
  validate_scene(scene);
  return scene;
}

std::string scene_to_json(const SceneGrid& scene) {
  json j;
  j["image_id"] = scene.image_id;
  j["h"] = scene.height_cells;
  j["w"] = scene.width_cells;
  json feats = json::array();
  for (int r = 0; r < scene.features.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < scene.features.cols(); ++c) {
      row.push_back(scene.features(r, c));
    }
    feats.push_back(std::move(row));
  }
  j["features"] = std::move(feats);
  json gt = json::array();
  for (int r = 0; r < scene.height_cells; ++r) {
    for (int c = 0; c < scene.width_cells; ++c) {
      const CellLabel& label = scene.gt[scene.cell_index(r, c)];
      if (label.is_background()) continue;
      gt.push_back({{"cell", {r, c}}, {"class", label.cls}, {"attr", label.attr}});
    }
  }
  j["gt"] = std::move(gt);
  return j.dump();
}

std::vector<SceneGrid> load_scenes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open scene file " + path.string());
  std::vector<SceneGrid> scenes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      scenes.push_back(parse_scene_json(line));
    } catch (const Error& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " +
                  e.what());
    }
  }
  return scenes;
}

void save_scenes(const std::filesystem::path& path,
                 const std::vector<SceneGrid>& scenes) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write scene file " + path.string());
  for (const auto& s : scenes) out << scene_to_json(s) << '\n';
}

std::vector<GtObject> gt_objects(const SceneGrid& scene) {
  std::vector<GtObject> objects;
  std::vector<bool> seen(scene.num_cells(), false);
  for (int start = 0; start < scene.num_cells(); ++start) {
    if (seen[start] || scene.gt[start].is_background()) continue;
    GtObject obj;
    obj.cls = scene.gt[start].cls;
    obj.attr = scene.gt[start].attr;
    obj.row0 = obj.row1 = start / scene.width_cells;
    obj.col0 = obj.col1 = start % scene.width_cells;
    std::vector<int> stack{start};
    seen[start] = true;
    while (!stack.empty()) {
      const int cell = stack.back();
      stack.pop_back();
      obj.cells.push_back(cell);
      const int r = cell / scene.width_cells, c = cell % scene.width_cells;
      obj.row0 = std::min(obj.row0, r);
      obj.row1 = std::max(obj.row1, r);
      obj.col0 = std::min(obj.col0, c);
      obj.col1 = std::max(obj.col1, c);
      const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int nr = r + dr[k], nc = c + dc[k];
        if (nr < 0 || nr >= scene.height_cells || nc < 0 ||
            nc >= scene.width_cells) {
          continue;
        }
        const int n = scene.cell_index(nr, nc);
        if (!seen[n] && scene.gt[n].cls == obj.cls) {
          seen[n] = true;
          stack.push_back(n);
        }
      }
    }
    ++obj.row1;
    ++obj.col1;
    std::sort(obj.cells.begin(), obj.cells.end());
    objects.push_back(std::move(obj));
  }
  return objects;
}

}  // namespace ctxalign
