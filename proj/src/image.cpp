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

#include "marl/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "marl/errors.hpp"

namespace marl::data {
namespace {

// Reads the next whitespace-delimited header token, skipping `#` comments.
std::string HeaderToken(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

Image ReadPpm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read image " + path.string());
  if (HeaderToken(in) != "P6") throw ParseError(path.string() + ": not a binary PPM (P6)");
  Image img;
  try {
    img.width = std::stoi(HeaderToken(in));
    img.height = std::stoi(HeaderToken(in));
    if (std::stoi(HeaderToken(in)) != 255) throw ParseError(path.string() + ": only maxval 255 is supported");
  } catch (const std::invalid_argument&) {
    throw ParseError(path.string() + ": malformed PPM header");
  }
  if (img.width <= 0 || img.height <= 0) throw ParseError(path.string() + ": bad image size");
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw ParseError(path.string() + ": truncated pixel data");
  }
  return img;
}

void WritePpm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

Image ResizeBilinear(const Image& image, int width, int height) {
  if (image.width == width && image.height == height) return image;
  Image out{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * 3)};
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        auto px = [&](int xx, int yy) {
          return static_cast<double>(image.rgb[(static_cast<std::size_t>(yy) * image.width + xx) * 3 + c]);
        };
        const double v = (1 - ty) * ((1 - tx) * px(x0, y0) + tx * px(x1, y0)) +
                         ty * ((1 - tx) * px(x0, y1) + tx * px(x1, y1));
        out.rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

PreparedFrame FrameStore::Prepare(const FrameRecord& record, const Image& raw) const {
  PreparedFrame frame;
  frame.image = ResizeBilinear(raw, side_, side_);
  const double sx = static_cast<double>(side_) / raw.width;
  const double sy = static_cast<double>(side_) / raw.height;
  for (int k = 0; k < kNumLandmarks; ++k) {
    Point p{record.landmarks[k].x * sx, record.landmarks[k].y * sy};
    if (p.x < 0 || p.y < 0 || p.x >= side_ || p.y >= side_) {
      throw SchemaError(record.image_path.string() + ": landmark " + std::to_string(k) +
                        " lies outside the image after resizing");
    }
    frame.landmarks[k] = p;
  }
  return frame;
}

void FrameStore::Put(const FrameRecord& record, const Image& image) {
  auto frame = std::make_shared<const PreparedFrame>(Prepare(record, image));
  std::lock_guard<std::mutex> lock(mu_);
  cache_[record.id] = std::move(frame);
}

std::shared_ptr<const PreparedFrame> FrameStore::Get(const FrameRecord& record) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(record.id);
    if (it != cache_.end()) return it->second;
  }
  auto frame = std::make_shared<const PreparedFrame>(Prepare(record, ReadPpm(record.image_path)));
  std::lock_guard<std::mutex> lock(mu_);
  return cache_.emplace(record.id, std::move(frame)).first->second;
}

Tensor FrameStore::Batch(const std::vector<FrameRecord>& frames) {
  const std::size_t per = static_cast<std::size_t>(side_) * side_ * 3;
  Tensor out(Shape{static_cast<int>(frames.size()), side_, side_, 3});
  for (std::size_t i = 0; i < frames.size(); ++i) {
    auto f = Get(frames[i]);
    double* dst = out.ptr() + i * per;
    for (std::size_t j = 0; j < per; ++j) dst[j] = f->image.rgb[j] / 127.5 - 1.0;
  }
  return out;
}

std::vector<Landmarks> FrameStore::BatchLandmarks(const std::vector<FrameRecord>& frames) {
  std::vector<Landmarks> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(Get(f)->landmarks);
  return out;
}

Tensor LabelTensor(const std::vector<FrameRecord>& frames) {
  const int c = frames.empty() ? 0 : static_cast<int>(frames.front().labels.size());
  Tensor out(Shape{static_cast<int>(frames.size()), c});
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (static_cast<int>(frames[i].labels.size()) != c) throw SchemaError("inconsistent label lengths in batch");
    for (int j = 0; j < c; ++j) out.data[i * c + j] = frames[i].labels[j];
  }
  return out;
}

}  // namespace marl::data
