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

#include <memory>
#include <string>
#include <vector>

#include "marl/image.hpp"
#include "marl/landmark_geometry.hpp"
#include "marl/meta_dataset.hpp"
#include "marl/region_network.hpp"
#include "marl/synthetic_corpus.hpp"
#include "test_util.hpp"

// Small architectures and inputs shared by the network-level suites.
namespace marl::test {

// 32x32 inputs, 8x8 feature grid, 4 channels; fast enough for finite differences.
inline net::RegionConfig TinyRegionConfig(int num_aus = 2) {
  net::RegionConfig c;
  c.backbone.input_side = 32;
  c.backbone.feature_side = 8;
  c.backbone.widths = {4, 4, 4, 4};
  c.backbone.kernels = {3, 3, 3, 3};
  c.backbone.strides = {2, 2, 1, 1};
  c.num_aus = num_aus;
  c.crop_size = 3;
  c.embed_dim = 5;
  c.head_hidden = 4;
  return c;
}

inline geometry::AUCenterTable TinyTable(int num_aus = 2) {
  const std::vector<std::string> ids{"1", "12", "6", "17", "2", "4"};
  return geometry::AUCenterTable::Bp4d().Select({ids.begin(), ids.begin() + num_aus});
}

inline Tensor TinyImages(int n, int side, std::uint64_t seed) { return RandomTensor(Shape{n, side, side, 3}, seed); }

inline std::vector<data::Landmarks> TinyLandmarks(int n, int side) {
  return std::vector<data::Landmarks>(n, synth::TemplateLandmarks(side));
}

// A rendered corpus held in memory, folds assigned.
struct TinyCorpus {
  data::SubjectIndex index;
  std::shared_ptr<data::FrameStore> store;
};

inline TinyCorpus MakeTinyCorpus(synth::CorpusSpec spec, int folds, std::uint64_t split_seed = 0) {
  const auto frames = synth::GenerateFrames(spec);
  TinyCorpus c;
  c.store = std::make_shared<data::FrameStore>(spec.image_side);
  for (const auto& f : frames) c.store->Put(f.record, f.image);
  c.index = data::SplitFolds(synth::IndexFrames(frames, spec.num_labels()), folds, split_seed);
  return c;
}

inline synth::CorpusSpec TinySpec(int subjects, int frames, int num_aus = 2) {
  synth::CorpusSpec spec;
  spec.n_subjects = subjects;
  spec.frames_per_subject = frames;
  spec.au_ids = {"1", "12", "6", "17", "2", "4"};
  spec.au_ids.resize(num_aus);
  spec.base_rates = {0.4};
  spec.image_side = 32;
  spec.pattern_sigma = 2.0;
  spec.landmark_jitter = 0.3;
  return spec;
}

}  // namespace marl::test
