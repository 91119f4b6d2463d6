// Copyright 2026 The MARL-AU Authors.
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

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "marl/meta_dataset.hpp"
#include "marl/tensor.hpp"

// Landmark-driven AU centers and feature-grid crops.
//
// Landmarks follow the 49-point layout: 0-9 brows (0-4 on the image-left
// brow, listed outer to inner; 5-9 mirrored), 10-13 nose ridge, 14-18
// nostril base, 19-24 image-left eye (19 outer corner, 22 inner corner),
// 25-30 image-right eye (25 inner corner, 28 outer corner), 31-42 outer
// lip (31 and 37 the corners, 34 top center, 40 bottom center), 43-48
// inner lip (44 upper center, 47 lower center).
namespace marl::geometry {

using data::Landmarks;
using data::Point;

// Index of the horizontally mirrored counterpart of every landmark.
const std::vector<int>& MirrorPermutation();

// Mirrors x about `midline_x` and relabels points so the result is again a
// valid 49-point layout.
Landmarks MirrorLandmarks(const Landmarks& landmarks, double midline_x);

// Offsets are in units of the inter-ocular distance (between the two eye
// centroids). dx > 0 moves a center away from the face midline (the left
// center moves left, the right one right); dy > 0 moves down the image.
struct AUCenterRule {
  std::string au_id;
  int left_anchor = 0;
  int right_anchor = 0;
  double dx_frac = 0.0;
  double dy_frac = 0.0;
};

class AUCenterTable {
 public:
  AUCenterTable() = default;
  explicit AUCenterTable(std::vector<AUCenterRule> rules);

  // Text format, one AU per line: `au_id left_anchor right_anchor dx_frac dy_frac`.
  static AUCenterTable Parse(const std::string& text, const std::string& origin = "<au-table>");
  static AUCenterTable Load(const std::filesystem::path& path);
  std::string Serialize() const;

  // Approximate EAC-style rules for the 12 BP4D AUs (1 2 4 6 7 10 12 14 15
  // 17 23 24) and the 8 DISFA AUs (1 2 4 6 9 12 25 26).
  static AUCenterTable Bp4d();
  static AUCenterTable Disfa();

  // Keeps the rules whose au_id appears in `ids`, in that order.
  AUCenterTable Select(const std::vector<std::string>& ids) const;

  const std::vector<AUCenterRule>& rules() const { return rules_; }
  int size() const { return static_cast<int>(rules_.size()); }

 private:
  std::vector<AUCenterRule> rules_;
};

double InterOcularDistance(const Landmarks& landmarks);

// 2C points ordered AU0-left, AU0-right, AU1-left, ...
std::vector<Point> ComputeAUCenters(const Landmarks& landmarks, const AUCenterTable& table);

struct GridCoord {
  int row = 0;
  int col = 0;
  bool operator==(const GridCoord&) const = default;
};

// Floor division by the stride (image_size / grid_size), clamped to the grid.
GridCoord MapToFeatureGrid(const Point& point, int image_size, int grid_size);

// Top-left cell of a size x size window centered on `center`
// (center - size/2), shifted back inside the grid when it would overflow.
GridCoord CropOrigin(const GridCoord& center, int size, int grid_size);

// Copies the window around `center` from an [H, W, D] map (or [1, H, W, D]).
// Result is [size, size, D].
Tensor CropRegion(const Tensor& feature_map, const GridCoord& center, int size);

}  // namespace marl::geometry
