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

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fixtures.hpp"
#include "marl/checkpoint.hpp"
#include "marl/errors.hpp"
#include "marl/losses_metrics.hpp"
#include "marl/maml_engine.hpp"
#include "marl/region_network.hpp"
#include "marl/simd/kernels.hpp"

using namespace marl;
using namespace marl::net;
namespace fs = std::filesystem;

namespace {

bool SameValues(const ParameterSet& a, const ParameterSet& b, const std::string& prefix) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.names()[i].rfind(prefix, 0) != 0) continue;
    if (a.vars()[i].value().data != b.Get(a.names()[i]).value().data) return false;
  }
  return true;
}

// Mask-weighted sum selecting row k of a [2C, N, E] branch output.
ag::Var RowProbe(const ag::Var& out, int k, std::uint64_t seed) {
  Tensor w = test::RandomTensor(out.shape(), seed);
  const std::size_t row = out.value().size() / out.shape()[0];
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (static_cast<int>(i / row) != k) w.data[i] = 0.0;
  }
  return ag::SumAll(ag::Mul(out, ag::Constant(w)));
}

}  // namespace

TEST_SUITE("region_network") {
  TEST_CASE("config validation") {
    RegionConfig c;
    CHECK_NOTHROW(c.Validate());
    c.backbone.strides = {2, 2, 2, 1};
    CHECK_THROWS_AS(c.Validate(), ConfigError);
    c = RegionConfig{};
    c.crop_size = 15;
    CHECK_THROWS_AS(c.Validate(), ConfigError);
    CHECK_THROWS_AS(RegionNetwork(RegionConfig{}, test::TinyTable(2)), ConfigError);
  }

  TEST_CASE("initialization is seed-deterministic") {
    const RegionNetwork net(test::TinyRegionConfig(), test::TinyTable());
    const ParameterSet a = net.Init(3), b = net.Init(3), c = net.Init(4);
    CHECK(SameValues(a, b, ""));
    CHECK_FALSE(SameValues(a, c, "branch."));
    CHECK(a.Get("branch.conv.weight").shape() == Shape{4, 3 * 3 * 4, 5});
    CHECK(a.Get("head.fc2.weight").shape() == Shape{2, 4, 1});
  }

  TEST_CASE("pretrained backbone initialization") {
    const RegionNetwork net(test::TinyRegionConfig(), test::TinyTable());
    const ParameterSet source = net.Init(11);
    Checkpoint ckpt;
    ckpt.fingerprint = "backbone";
    for (const auto& t : source.ToTensors()) {
      if (t.name.rfind("backbone.", 0) == 0) ckpt.tensors.push_back(t);
    }
    const fs::path dir = fs::temp_directory_path() / "marl_region_test";
    fs::create_directories(dir);
    SaveCheckpoint(dir / "bb.ckpt", ckpt);
    const ParameterSet p1 = net.InitFromPretrained(dir / "bb.ckpt", 1);
    const ParameterSet p2 = net.InitFromPretrained(dir / "bb.ckpt", 2);
    CHECK(SameValues(p1, source, "backbone."));
    CHECK(SameValues(p2, source, "backbone."));
    CHECK_FALSE(SameValues(p1, p2, "head."));
    CHECK(p1.names() == source.names());

    ckpt.tensors[0].tensor = Tensor(Shape{5, 5, 3, 4}, 0.0);
    SaveCheckpoint(dir / "bad.ckpt", ckpt);
    try {
      net.InitFromPretrained(dir / "bad.ckpt", 1);
      FAIL("expected a load error");
    } catch (const LoadError& e) {
      CHECK(std::string(e.what()).find("backbone.g0.c0.weight") != std::string::npos);
    }
  }

  TEST_CASE("shapes through the pipeline") {
    const RegionConfig cfg = test::TinyRegionConfig(3);
    const RegionNetwork net(cfg, test::TinyTable(3));
    const ParameterSet p = net.Init(0);
    const ag::Var images = ag::Constant(test::TinyImages(2, 32, 1));
    const auto lms = test::TinyLandmarks(2, 32);
    const ag::Var f = net.Features(p, images);
    CHECK(f.shape() == Shape{2, 8, 8, 4});
    CHECK(net.Features(p, ag::Constant(Tensor(Shape{1, 32, 32, 3}, 0.0))).value().AllFinite());
    const CropCenters centers = net.Centers(lms);
    REQUIRE(centers.size() == 2);
    CHECK(centers[0].size() == 6);
    CHECK(net.Branches(p, f, centers).shape() == Shape{6, 2, 5});
    CHECK(net.Embeddings(p, images, lms).shape() == Shape{3, 2, 5});
    CHECK(net.Predict(p, images, lms).shape() == Shape{2, 3});
    CHECK_THROWS_AS(net.Features(p, ag::Constant(Tensor(Shape{2, 30, 30, 3}, 0.0))), ShapeError);

    // desk-scale defaults propagate: D = 64 on a 14x14 grid, 24 branches of width 150
    RegionConfig desk;
    desk.backbone.widths = {4, 4, 4, 64};
    const RegionNetwork big(desk, geometry::AUCenterTable::Bp4d());
    const ParameterSet bp = big.Init(0);
    const ag::Var bf = big.Features(bp, ag::Constant(Tensor(Shape{1, 224, 224, 3}, 0.0)));
    CHECK(bf.shape() == Shape{1, 14, 14, 64});
    const ag::Var br = big.Branches(bp, bf, big.Centers({synth::TemplateLandmarks(224)}));
    CHECK(br.shape() == Shape{24, 1, 150});
    CHECK(MergeSymmetric(br).shape() == Shape{12, 1, 150});
  }

  TEST_CASE("symmetric merge") {
    Tensor t(Shape{4, 1, 2});
    t.data = {1, 2, 1, 2, 3, -4, -3, 4};
    const Tensor m = MergeSymmetric(ag::Constant(t)).value();
    CHECK(m.shape == Shape{2, 1, 2});
    CHECK(m.data == std::vector<double>{1, 2, 0, 0});
    CHECK_THROWS_AS(MergeSymmetric(ag::Constant(Tensor(Shape{3, 1, 2}, 0.0))), ShapeError);
  }

  TEST_CASE("branch locality") {
    const RegionNetwork net(test::TinyRegionConfig(2), test::TinyTable(2));
    const ParameterSet p = net.Init(5);
    const int n = 2, g = 8, d = 4, s = 3;
    const Tensor fm = test::RandomTensor(Shape{n, g, g, d}, 6);
    const CropCenters centers{{{1, 1}, {1, 6}, {6, 1}, {6, 6}}, {{3, 3}, {0, 7}, {7, 0}, {5, 4}}};
    for (int k = 0; k < 4; ++k) {
      const ag::Var x = ag::Parameter(fm);
      const Tensor grad = ag::Grad(RowProbe(net.Branches(p, x, centers), k, 7 + k), {x})[0].value();
      for (int b = 0; b < n; ++b) {
        const geometry::GridCoord o = geometry::CropOrigin(centers[b][k], s, g);
        double inside = 0.0;
        for (int r = 0; r < g; ++r)
          for (int c = 0; c < g; ++c)
            for (int ch = 0; ch < d; ++ch) {
              const double v = grad.data[((b * g + r) * g + c) * d + ch];
              const bool in = r >= o.row && r < o.row + s && c >= o.col && c < o.col + s;
              if (in) {
                inside += std::abs(v);
              } else {
                CHECK(v == 0.0);
              }
            }
        CHECK(inside > 0.0);
      }
      // finite-difference spot check: a large change outside window k leaves output k alone
      Tensor shifted = fm;
      const geometry::GridCoord o = geometry::CropOrigin(centers[0][k], s, g);
      const int r = (o.row + s) % g, c = (o.col + s) % g;
      shifted.data[(r * g + c) * d] += 100.0;
      const Tensor before = net.Branches(p, ag::Constant(fm), centers).value();
      const Tensor after = net.Branches(p, ag::Constant(shifted), centers).value();
      const std::size_t row = before.size() / 4;
      for (std::size_t i = k * row; i < (k + 1) * row; ++i) CHECK(before.data[i] == after.data[i]);
    }
  }

  TEST_CASE("probabilities lie in (0, 1) and zero logits give one half") {
    const RegionNetwork net(test::TinyRegionConfig(2), test::TinyTable(2));
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Tensor prob =
          net.Predict(net.Init(seed), ag::Constant(test::TinyImages(3, 32, 20 + seed)), test::TinyLandmarks(3, 32))
              .value();
      for (double v : prob.data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }
    ParameterSet zero;
    const ParameterSet p = net.Init(1);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const bool last = p.names()[i].rfind("head.fc2", 0) == 0;
      zero.Add(p.names()[i], last ? ag::Constant(Tensor(p.vars()[i].shape(), 0.0)) : p.vars()[i]);
    }
    const Tensor half = net.Predict(zero, ag::Constant(test::TinyImages(2, 32, 2)), test::TinyLandmarks(2, 32)).value();
    for (double v : half.data) CHECK(v == 0.5);
    // evaluation is deterministic
    const ag::Var im = ag::Constant(test::TinyImages(2, 32, 3));
    CHECK(net.Predict(p, im, test::TinyLandmarks(2, 32)).value().data ==
          net.Predict(p, im, test::TinyLandmarks(2, 32)).value().data);
  }

  TEST_CASE("head gradients of the cross entropy match finite differences") {
    const RegionNetwork net(test::TinyRegionConfig(2), test::TinyTable(2));
    const ParameterSet p = net.Init(9);
    const ag::Var images = ag::Constant(test::TinyImages(3, 32, 4));
    const auto lms = test::TinyLandmarks(3, 32);
    Tensor labels(Shape{3, 2});
    labels.data = {1, 0, 0, 1, 1, 1};
    const loss::LossWeights w = loss::ComputeWeights(std::vector<double>{0.4, 0.6});
    const ag::Var tokens = ag::Constant(net.Embeddings(p, images, lms).value());
    const std::vector<std::string> heads{"head.fc1.weight", "head.fc1.bias", "head.fc2.weight", "head.fc2.bias"};
    std::vector<Tensor> inputs;
    for (const auto& h : heads) inputs.push_back(p.Get(h).value());
    auto fn = [&](const std::vector<ag::Var>& v) {
      ParameterSet q;
      for (std::size_t i = 0; i < heads.size(); ++i) q.Add(heads[i], v[i]);
      return loss::WeightedBce(ag::Sigmoid(net.HeadLogits(q, tokens)), labels, w);
    };
    CHECK(test::GradientError(fn, inputs) < 1e-4);
  }

  TEST_CASE("a single episode can be overfit") {
    const RegionNetwork net(test::TinyRegionConfig(2), test::TinyTable(2));
    meta::MetaState state;
    state.theta = net.Init(2);
    const ag::Var images = ag::Constant(test::TinyImages(8, 32, 5));
    const auto lms = test::TinyLandmarks(8, 32);
    Tensor labels(Shape{8, 2});
    labels.data = {1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 0, 1, 1, 1, 0, 0};
    const loss::LossWeights w = loss::ComputeWeights(std::vector<double>{0.5, 0.5});
    meta::AdamConfig adam;
    adam.lr = 0.01;
    double bce = 1.0;
    for (int step = 0; step < 200 && bce >= 0.05; ++step) {
      const ag::Var l = loss::WeightedBce(net.Predict(state.theta, images, lms), labels, w);
      bce = l.item();
      std::vector<Tensor> grads;
      for (const auto& g : ag::Grad(l, state.theta.vars())) grads.push_back(g.value());
      state.theta = meta::AdamUpdate(state.theta, grads, state.adam, adam);
    }
    CHECK(bce < 0.05);
  }

  TEST_CASE("backends agree on the full network") {
    if (simd::Avx2Kernels() == nullptr && simd::NeonKernels() == nullptr) return;
    const RegionNetwork net(test::TinyRegionConfig(2), test::TinyTable(2));
    const ParameterSet p = net.Init(3);
    const ag::Var images = ag::Parameter(test::TinyImages(2, 32, 6));
    const auto lms = test::TinyLandmarks(2, 32);
    auto run = [&] {
      const ag::Var out = net.Predict(p, images, lms);
      const Tensor g = ag::Grad(ag::SumAll(out), {p.Get("backbone.g0.c0.weight")})[0].value();
      return std::make_pair(out.value(), g);
    };
    const std::string original = simd::Active().name;
    simd::SetBackend(simd::Backend::kScalar);
    const auto ref = run();
    simd::SetBackend(simd::Avx2Kernels() ? simd::Backend::kAvx2 : simd::Backend::kNeon);
    const auto fast = run();
    simd::SetBackend(original);
    CHECK(test::MaxAbsDiff(ref.first, fast.first) < 1e-12);
    CHECK(test::MaxAbsDiff(ref.second, fast.second) < 1e-10);
  }
}
