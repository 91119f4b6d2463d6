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

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "marl/meta_dataset.hpp"
#include "marl/tensor.hpp"

namespace marl::data {

// 8-bit interleaved RGB.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

// Binary PPM (P6, maxval 255).
Image ReadPpm(const std::filesystem::path& path);
void WritePpm(const std::filesystem::path& path, const Image& image);

Image ResizeBilinear(const Image& image, int width, int height);

struct PreparedFrame {
  Image image;          // side x side
  Landmarks landmarks;  // mapped into the resized image
};

// Loads, resizes and caches frames by record id. Safe for concurrent use.
class FrameStore {
 public:
  explicit FrameStore(int side = 224) : side_(side) {}

  int side() const { return side_; }

  // Registers an in-memory image for a record id (skips disk reads).
  void Put(const FrameRecord& record, const Image& image);
  std::shared_ptr<const PreparedFrame> Get(const FrameRecord& record);

  // [N, side, side, 3] with pixel values mapped to [-1, 1].
  Tensor Batch(const std::vector<FrameRecord>& frames);
  std::vector<Landmarks> BatchLandmarks(const std::vector<FrameRecord>& frames);

 private:
  PreparedFrame Prepare(const FrameRecord& record, const Image& raw) const;

  int side_;
  std::mutex mu_;
  std::unordered_map<int, std::shared_ptr<const PreparedFrame>> cache_;
};

// Labels of `frames` as an [N, C] tensor of 0/1.
Tensor LabelTensor(const std::vector<FrameRecord>& frames);

}  // namespace marl::data
