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
#include <string>
#include <vector>

#include "marl/autograd.hpp"
#include "marl/landmark_geometry.hpp"
#include "marl/parameter_set.hpp"

namespace marl::net {

// Four convolution groups with a total stride of input_side / feature_side.
// Each group opens with a strided convolution followed by
// convs_per_group - 1 stride-1 convolutions, all ReLU-activated and
// normalization-free. A kernel equal to its stride gets no padding; other
// kernels are "same"-padded.
struct BackboneConfig {
  int input_side = 224;
  int feature_side = 14;
  std::vector<int> widths{16, 32, 64, 64};
  std::vector<int> kernels{3, 3, 3, 3};
  std::vector<int> strides{2, 2, 2, 2};
  int convs_per_group = 1;

  int feature_channels() const { return widths.empty() ? 0 : widths.back(); }
  void Validate() const;
};

struct RegionConfig {
  BackboneConfig backbone;
  int num_aus = 12;
  int crop_size = 6;
  int embed_dim = 150;
  int head_hidden = 64;

  void Validate() const;
  std::string Canonical() const;
};

// Branch outputs come in left/right pairs; token i is the mean of rows
// 2i and 2i+1. Input [2C, N, E] -> [C, N, E].
ag::Var MergeSymmetric(const ag::Var& branch_outputs);

// Per-frame feature-grid crop centers, 2C each.
using CropCenters = std::vector<std::vector<geometry::GridCoord>>;

// The region representation network. Stateless apart from its architecture:
// parameters are passed in so adapted copies can be evaluated functionally.
//
// Parameter layout:
//   backbone.g<i>.c<j>.weight [k,k,Cin,Cout] / .bias [Cout]
//   branch.conv.weight [2C, s*s*D, E]  (one full-window filter per branch)
//   branch.fc.weight   [2C, E, E]
//   head.fc1.weight    [C, E, H], head.fc2.weight [C, H, 1]  (per-AU heads)
// plus matching biases.
class RegionNetwork {
 public:
  RegionNetwork(RegionConfig config, geometry::AUCenterTable table);

  const RegionConfig& config() const { return config_; }
  const geometry::AUCenterTable& table() const { return table_; }
  std::string Fingerprint() const;

  ParameterSet Init(std::uint64_t seed) const;
  // Backbone from a checkpoint; branches and heads freshly initialized.
  ParameterSet InitFromPretrained(const std::filesystem::path& path, std::uint64_t seed) const;

  // [N, side, side, 3] -> [N, F, F, D]
  ag::Var Features(const ParameterSet& params, const ag::Var& images) const;
  CropCenters Centers(const std::vector<data::Landmarks>& landmarks) const;
  // -> [2C, N, E]; branch k only sees window k.
  ag::Var Branches(const ParameterSet& params, const ag::Var& features, const CropCenters& centers) const;
  // Features, crops, branches and symmetric merge: -> [C, N, E].
  ag::Var Embeddings(const ParameterSet& params, const ag::Var& images,
                     const std::vector<data::Landmarks>& landmarks) const;
  // Per-AU two-layer heads on merged tokens: [C, N, E] -> logits [N, C].
  ag::Var HeadLogits(const ParameterSet& params, const ag::Var& tokens) const;
  // Probabilities [N, C].
  ag::Var Predict(const ParameterSet& params, const ag::Var& images,
                  const std::vector<data::Landmarks>& landmarks) const;

 private:
  RegionConfig config_;
  geometry::AUCenterTable table_;
};

// Shared building blocks.
ag::Var BatchedLinear(const ag::Var& x, const ag::Var& weight, const ag::Var& bias);  // [B,N,I] x [B,I,O] + [B,O]
Tensor HeNormal(const Shape& shape, int fan_in, double gain, Rng& rng);

}  // namespace marl::net
