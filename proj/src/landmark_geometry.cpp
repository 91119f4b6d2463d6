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

#include "marl/landmark_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "marl/errors.hpp"
#include "marl/kv_config.hpp"

namespace marl::geometry {
namespace {

Point EyeCentroid(const Landmarks& lm, int first) {
  Point c;
  for (int i = first; i < first + 6; ++i) {
    c.x += lm[i].x;
    c.y += lm[i].y;
  }
  c.x /= 6.0;
  c.y /= 6.0;
  return c;
}

constexpr double kThird = 1.0 / 3.0;

}  // namespace

const std::vector<int>& MirrorPermutation() {
  static const std::vector<int> perm = [] {
    std::vector<int> p(data::kNumLandmarks);
    for (int i = 0; i < data::kNumLandmarks; ++i) p[i] = i;
    auto pair = [&p](int a, int b) {
      p[a] = b;
      p[b] = a;
    };
    for (int i = 0; i < 5; ++i) pair(i, 9 - i);  // brows
    pair(14, 18);                                // nostrils
    pair(15, 17);
    pair(19, 28);  // eye corners and lids
    pair(20, 27);
    pair(21, 26);
    pair(22, 25);
    pair(23, 30);
    pair(24, 29);
    pair(31, 37);  // outer lip
    pair(32, 36);
    pair(33, 35);
    pair(38, 42);
    pair(39, 41);
    pair(43, 45);  // inner lip
    pair(46, 48);
    return p;
  }();
  return perm;
}

Landmarks MirrorLandmarks(const Landmarks& landmarks, double midline_x) {
  const auto& perm = MirrorPermutation();
  Landmarks out;
  for (int i = 0; i < data::kNumLandmarks; ++i) {
    const Point& src = landmarks[perm[i]];
    out[i] = {2.0 * midline_x - src.x, src.y};
  }
  return out;
}

AUCenterTable::AUCenterTable(std::vector<AUCenterRule> rules) : rules_(std::move(rules)) {
  for (const auto& r : rules_) {
    if (r.left_anchor < 0 || r.left_anchor >= data::kNumLandmarks || r.right_anchor < 0 ||
        r.right_anchor >= data::kNumLandmarks) {
      throw SchemaError("AU center rule `" + r.au_id + "` has an anchor outside [0, 49)");
    }
    if (!std::isfinite(r.dx_frac) || !std::isfinite(r.dy_frac)) {
      throw SchemaError("AU center rule `" + r.au_id + "` has a non-finite offset");
    }
  }
}

AUCenterTable AUCenterTable::Parse(const std::string& text, const std::string& origin) {
  std::vector<AUCenterRule> rules;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    AUCenterRule r;
    if (!(ls >> r.au_id)) continue;
    if (!(ls >> r.left_anchor >> r.right_anchor >> r.dx_frac >> r.dy_frac)) {
      throw ParseError(origin + ":" + std::to_string(line_no) +
                       ": expected `au_id left_anchor right_anchor dx_frac dy_frac`");
    }
    std::string extra;
    if (ls >> extra) throw ParseError(origin + ":" + std::to_string(line_no) + ": trailing field `" + extra + "`");
    rules.push_back(r);
  }
  if (rules.empty()) throw SchemaError(origin + ": AU center table is empty");
  return AUCenterTable(std::move(rules));
}

AUCenterTable AUCenterTable::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read AU center table " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return Parse(buffer.str(), path.string());
}

std::string AUCenterTable::Serialize() const {
  std::ostringstream os;
  for (const auto& r : rules_) {
    os << r.au_id << ' ' << r.left_anchor << ' ' << r.right_anchor << ' ' << FormatDouble(r.dx_frac) << ' '
       << FormatDouble(r.dy_frac) << '\n';
  }
  return os.str();
}

AUCenterTable AUCenterTable::Bp4d() {
  return AUCenterTable({
      {"1", 4, 5, 0.0, -0.5},       // inner brow raiser: above inner brow
      {"2", 0, 9, 0.0, -kThird},    // outer brow raiser: above outer brow
      {"4", 2, 7, 0.0, kThird},     // brow lowerer: below brow center
      {"6", 24, 29, 0.0, 1.0},      // cheek raiser: below lower lid
      {"7", 23, 30, 0.0, 0.0},      // lid tightener: lower lid
      {"10", 33, 35, 0.0, 0.0},     // upper lip raiser
      {"12", 31, 37, 0.0, 0.0},     // lip corner puller
      {"14", 31, 37, 0.25, 0.0},    // dimpler: outside the corner
      {"15", 31, 37, 0.0, 0.25},    // lip corner depressor: below the corner
      {"17", 41, 39, 0.0, 0.5},     // chin raiser: below the lower lip
      {"23", 43, 45, 0.0, 0.0},     // lip tightener
      {"24", 48, 46, 0.0, 0.0},     // lip pressor
  });
}

AUCenterTable AUCenterTable::Disfa() {
  return AUCenterTable({
      {"1", 4, 5, 0.0, -0.5},
      {"2", 0, 9, 0.0, -kThird},
      {"4", 2, 7, 0.0, kThird},
      {"6", 24, 29, 0.0, 1.0},
      {"9", 15, 17, 0.0, -0.5},     // nose wrinkler: nose flanks
      {"12", 31, 37, 0.0, 0.0},
      {"25", 43, 45, 0.0, 0.1},     // lips part
      {"26", 41, 39, 0.0, 0.5},     // jaw drop
  });
}

AUCenterTable AUCenterTable::Select(const std::vector<std::string>& ids) const {
  std::vector<AUCenterRule> picked;
  for (const auto& id : ids) {
    auto it = std::find_if(rules_.begin(), rules_.end(), [&](const AUCenterRule& r) { return r.au_id == id; });
    if (it == rules_.end()) throw ConfigError("AU `" + id + "` is not in the center table");
    picked.push_back(*it);
  }
  return AUCenterTable(std::move(picked));
}

double InterOcularDistance(const Landmarks& landmarks) {
  const Point l = EyeCentroid(landmarks, 19);
  const Point r = EyeCentroid(landmarks, 25);
  return std::hypot(r.x - l.x, r.y - l.y);
}

std::vector<Point> ComputeAUCenters(const Landmarks& landmarks, const AUCenterTable& table) {
  const double iod = InterOcularDistance(landmarks);
  std::vector<Point> centers;
  centers.reserve(2 * table.rules().size());
  for (const auto& r : table.rules()) {
    const Point& l = landmarks[r.left_anchor];
    const Point& rt = landmarks[r.right_anchor];
    centers.push_back({l.x - r.dx_frac * iod, l.y + r.dy_frac * iod});
    centers.push_back({rt.x + r.dx_frac * iod, rt.y + r.dy_frac * iod});
  }
  return centers;
}

GridCoord MapToFeatureGrid(const Point& point, int image_size, int grid_size) {
  if (grid_size <= 0 || image_size % grid_size != 0) {
    throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by grid size " +
                      std::to_string(grid_size));
  }
  const double stride = static_cast<double>(image_size / grid_size);
  auto cell = [&](double v) {
    const double f = std::floor(v / stride);
    return static_cast<int>(std::clamp(f, 0.0, static_cast<double>(grid_size - 1)));
  };
  return {cell(point.y), cell(point.x)};
}

GridCoord CropOrigin(const GridCoord& center, int size, int grid_size) {
  if (size > grid_size) {
    throw ConfigError("crop size " + std::to_string(size) + " exceeds grid side " + std::to_string(grid_size));
  }
  auto shift = [&](int c) { return std::clamp(c - size / 2, 0, grid_size - size); };
  return {shift(center.row), shift(center.col)};
}

Tensor CropRegion(const Tensor& feature_map, const GridCoord& center, int size) {
  Shape s = feature_map.shape;
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3) throw ShapeError("CropRegion expects [H,W,D], got " + ShapeString(feature_map.shape));
  const int h = s[0], w = s[1], d = s[2];
  if (size > h || size > w) {
    throw ConfigError("crop size " + std::to_string(size) + " exceeds grid side " + std::to_string(std::min(h, w)));
  }
  if (center.row < 0 || center.row >= h || center.col < 0 || center.col >= w) {
    throw ShapeError("crop center outside the feature grid");
  }
  const int top = std::clamp(center.row - size / 2, 0, h - size);
  const int left = std::clamp(center.col - size / 2, 0, w - size);
  Tensor out(Shape{size, size, d});
  for (int r = 0; r < size; ++r) {
    const double* src = feature_map.ptr() + (static_cast<std::size_t>(top + r) * w + left) * d;
    std::copy_n(src, static_cast<std::size_t>(size) * d, out.ptr() + static_cast<std::size_t>(r) * size * d);
  }
  return out;
}

}  // namespace marl::geometry
