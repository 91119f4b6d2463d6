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

#include "marl/region_network.hpp"

#include <cmath>
#include <sstream>

#include "marl/errors.hpp"
#include "marl/rng.hpp"

namespace marl::net {
namespace {

int Padding(int kernel, int stride) { return kernel == stride ? 0 : (kernel - 1) / 2; }

int ConvOut(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

std::string ConvName(std::size_t group, int conv) {
  return "backbone.g" + std::to_string(group) + ".c" + std::to_string(conv);
}

bool IsBackbone(const std::string& name) { return name.rfind("backbone.", 0) == 0; }

}  // namespace

void BackboneConfig::Validate() const {
  if (widths.size() != 4 || kernels.size() != 4 || strides.size() != 4) {
    throw ConfigError("backbone needs exactly 4 convolution groups");
  }
  if (convs_per_group < 1) throw ConfigError("convs_per_group must be at least 1");
  if (feature_side <= 0 || input_side % feature_side != 0) {
    throw ConfigError("input side must be a multiple of the feature side");
  }
  int stride_product = 1;
  int side = input_side;
  for (std::size_t g = 0; g < 4; ++g) {
    if (widths[g] <= 0 || kernels[g] <= 0 || strides[g] <= 0) {
      throw ConfigError("backbone widths, kernels and strides must be positive");
    }
    stride_product *= strides[g];
    side = ConvOut(side, kernels[g], strides[g], Padding(kernels[g], strides[g]));
    for (int c = 1; c < convs_per_group; ++c) side = ConvOut(side, kernels[g], 1, Padding(kernels[g], 1));
  }
  if (stride_product != input_side / feature_side) {
    throw ConfigError("backbone stride product " + std::to_string(stride_product) + " != input_side / feature_side");
  }
  if (side != feature_side) {
    throw ConfigError("backbone produces a " + std::to_string(side) + "-cell grid, expected " +
                      std::to_string(feature_side));
  }
}

void RegionConfig::Validate() const {
  backbone.Validate();
  if (num_aus < 1) throw ConfigError("AU count must be positive");
  if (crop_size < 1 || crop_size > backbone.feature_side) {
    throw ConfigError("crop size " + std::to_string(crop_size) + " exceeds grid side " +
                      std::to_string(backbone.feature_side));
  }
  if (embed_dim < 1 || head_hidden < 1) throw ConfigError("embedding and head widths must be positive");
}

std::string RegionConfig::Canonical() const {
  std::ostringstream os;
  os << "region-v1 input=" << backbone.input_side << " grid=" << backbone.feature_side << " widths=";
  for (int w : backbone.widths) os << w << ',';
  os << " kernels=";
  for (int k : backbone.kernels) os << k << ',';
  os << " strides=";
  for (int s : backbone.strides) os << s << ',';
  os << " convs=" << backbone.convs_per_group << " aus=" << num_aus << " crop=" << crop_size
     << " embed=" << embed_dim << " hidden=" << head_hidden;
  return os.str();
}

ag::Var MergeSymmetric(const ag::Var& branch_outputs) {
  const Shape& s = branch_outputs.shape();
  if (s.size() != 3) throw ShapeError("MergeSymmetric expects [2C, N, E], got " + ShapeString(s));
  if (s[0] % 2 != 0) throw ShapeError("MergeSymmetric needs an even branch count, got " + std::to_string(s[0]));
  const int c = s[0] / 2;
  ag::Var pairs = ag::Reshape(branch_outputs, {c, 2, s[1] * s[2]});
  return ag::Reshape(ag::Scale(ag::SumMid(pairs), 0.5), {c, s[1], s[2]});
}

ag::Var BatchedLinear(const ag::Var& x, const ag::Var& weight, const ag::Var& bias) {
  ag::Var y = ag::BatchMatMul(x, weight);
  return ag::Add(y, ag::BroadcastMid(bias, x.shape()[1]));
}

Tensor HeNormal(const Shape& shape, int fan_in, double gain, Rng& rng) {
  Tensor t(shape);
  const double std = gain / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = std * StandardNormal(rng);
  return t;
}

RegionNetwork::RegionNetwork(RegionConfig config, geometry::AUCenterTable table)
    : config_(std::move(config)), table_(std::move(table)) {
  config_.Validate();
  if (table_.size() != config_.num_aus) {
    throw ConfigError("AU center table has " + std::to_string(table_.size()) + " rows, config expects " +
                      std::to_string(config_.num_aus));
  }
}

std::string RegionNetwork::Fingerprint() const {
  return marl::Fingerprint(config_.Canonical() + "\n" + table_.Serialize());
}

ParameterSet RegionNetwork::Init(std::uint64_t seed) const {
  const auto& bb = config_.backbone;
  const int c2 = 2 * config_.num_aus;
  const int c = config_.num_aus;
  const int e = config_.embed_dim;
  const int h = config_.head_hidden;
  const int window = config_.crop_size * config_.crop_size * bb.feature_channels();
  const double relu_gain = std::sqrt(2.0);

  Rng backbone_rng = MakeStream(seed, "init/backbone");
  Rng branch_rng = MakeStream(seed, "init/branch");
  Rng head_rng = MakeStream(seed, "init/head");
  ParameterSet p;
  int cin = 3;
  for (std::size_t g = 0; g < 4; ++g) {
    for (int j = 0; j < bb.convs_per_group; ++j) {
      const int k = bb.kernels[g];
      const int cout = bb.widths[g];
      p.Add(ConvName(g, j) + ".weight", ag::Parameter(HeNormal({k, k, cin, cout}, k * k * cin, relu_gain, backbone_rng)));
      p.Add(ConvName(g, j) + ".bias", ag::Parameter(Tensor(Shape{cout}, 0.0)));
      cin = cout;
    }
  }
  p.Add("branch.conv.weight", ag::Parameter(HeNormal({c2, window, e}, window, relu_gain, branch_rng)));
  p.Add("branch.conv.bias", ag::Parameter(Tensor(Shape{c2, e}, 0.0)));
  p.Add("branch.fc.weight", ag::Parameter(HeNormal({c2, e, e}, e, 1.0, branch_rng)));
  p.Add("branch.fc.bias", ag::Parameter(Tensor(Shape{c2, e}, 0.0)));
  p.Add("head.fc1.weight", ag::Parameter(HeNormal({c, e, h}, e, relu_gain, head_rng)));
  p.Add("head.fc1.bias", ag::Parameter(Tensor(Shape{c, h}, 0.0)));
  p.Add("head.fc2.weight", ag::Parameter(HeNormal({c, h, 1}, h, 1.0, head_rng)));
  p.Add("head.fc2.bias", ag::Parameter(Tensor(Shape{c, 1}, 0.0)));
  return p;
}

ParameterSet RegionNetwork::InitFromPretrained(const std::filesystem::path& path, std::uint64_t seed) const {
  const Checkpoint ckpt = LoadCheckpoint(path);
  ParameterSet fresh = Init(seed);
  ParameterSet out;
  std::vector<std::string> offending;
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    const std::string& name = fresh.names()[i];
    if (!IsBackbone(name)) {
      out.Add(name, fresh.vars()[i]);
      continue;
    }
    const Tensor* t = ckpt.Find(name);
    if (t == nullptr) {
      offending.push_back(name + " (missing)");
    } else if (t->shape != fresh.vars()[i].shape()) {
      offending.push_back(name + " (file " + ShapeString(t->shape) + ", expected " +
                          ShapeString(fresh.vars()[i].shape()) + ")");
    } else {
      out.Add(name, ag::Parameter(*t));
    }
  }
  if (!offending.empty()) {
    std::string msg = path.string() + ": pretrained backbone does not match:";
    for (const auto& o : offending) msg += "\n  " + o;
    throw LoadError(msg);
  }
  return out;
}

ag::Var RegionNetwork::Features(const ParameterSet& params, const ag::Var& images) const {
  const auto& bb = config_.backbone;
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != bb.input_side || s[2] != bb.input_side || s[3] != 3) {
    throw ShapeError("expected images [N," + std::to_string(bb.input_side) + "," + std::to_string(bb.input_side) +
                     ",3], got " + ShapeString(s));
  }
  ag::Var x = images;
  for (std::size_t g = 0; g < 4; ++g) {
    for (int j = 0; j < bb.convs_per_group; ++j) {
      const int stride = j == 0 ? bb.strides[g] : 1;
      const std::string name = ConvName(g, j);
      x = ag::Conv2d(x, params[name + ".weight"], stride, Padding(bb.kernels[g], stride));
      x = ag::Relu(ag::AddBias(x, params[name + ".bias"]));
    }
  }
  return x;
}

CropCenters RegionNetwork::Centers(const std::vector<data::Landmarks>& landmarks) const {
  CropCenters out;
  out.reserve(landmarks.size());
  for (const auto& lm : landmarks) {
    std::vector<geometry::GridCoord> cells;
    for (const auto& p : geometry::ComputeAUCenters(lm, table_)) {
      cells.push_back(geometry::MapToFeatureGrid(p, config_.backbone.input_side, config_.backbone.feature_side));
    }
    out.push_back(std::move(cells));
  }
  return out;
}

ag::Var RegionNetwork::Branches(const ParameterSet& params, const ag::Var& features, const CropCenters& centers) const {
  const Shape& s = features.shape();
  const int windows = 2 * config_.num_aus;
  if (s.size() != 4 || static_cast<std::size_t>(s[0]) != centers.size()) {
    throw ShapeError("feature map " + ShapeString(s) + " does not match " + std::to_string(centers.size()) + " frames");
  }
  auto plan = std::make_shared<ag::CropPlan>();
  plan->n = s[0];
  plan->h = s[1];
  plan->w = s[2];
  plan->d = s[3];
  plan->windows = windows;
  plan->size = config_.crop_size;
  plan->origins.reserve(static_cast<std::size_t>(2) * s[0] * windows);
  for (const auto& frame : centers) {
    if (static_cast<int>(frame.size()) != windows) {
      throw ShapeError("expected " + std::to_string(windows) + " crop centers, got " + std::to_string(frame.size()));
    }
    for (const auto& cell : frame) {
      const auto origin = geometry::CropOrigin(cell, config_.crop_size, s[1]);
      plan->origins.push_back(origin.row);
      plan->origins.push_back(origin.col);
    }
  }
  ag::Var crops = ag::CropWindows(features, std::move(plan));
  ag::Var h = ag::Relu(BatchedLinear(crops, params["branch.conv.weight"], params["branch.conv.bias"]));
  return BatchedLinear(h, params["branch.fc.weight"], params["branch.fc.bias"]);
}

ag::Var RegionNetwork::Embeddings(const ParameterSet& params, const ag::Var& images,
                                  const std::vector<data::Landmarks>& landmarks) const {
  return MergeSymmetric(Branches(params, Features(params, images), Centers(landmarks)));
}

ag::Var RegionNetwork::HeadLogits(const ParameterSet& params, const ag::Var& tokens) const {
  ag::Var h = ag::Relu(BatchedLinear(tokens, params["head.fc1.weight"], params["head.fc1.bias"]));
  ag::Var logits = BatchedLinear(h, params["head.fc2.weight"], params["head.fc2.bias"]);  // [C, N, 1]
  const int c = logits.shape()[0];
  const int n = logits.shape()[1];
  return ag::Permute(ag::Reshape(logits, {c, n}), {1, 0});
}

ag::Var RegionNetwork::Predict(const ParameterSet& params, const ag::Var& images,
                               const std::vector<data::Landmarks>& landmarks) const {
  return ag::Sigmoid(HeadLogits(params, Embeddings(params, images, landmarks)));
}

}  // namespace marl::net
