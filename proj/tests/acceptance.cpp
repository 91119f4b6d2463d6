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

// Acceptance driver: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. `--only 1,4` runs a subset; the experiment knobs default
// to the documented budget.

#include <sys/wait.h>

#include <algorithm>
#include <ctime>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "fixtures.hpp"
#include "marl/checkpoint.hpp"
#include "marl/errors.hpp"
#include "marl/log.hpp"
#include "marl/losses_metrics.hpp"
#include "marl/maml_engine.hpp"
#include "marl/relation_module.hpp"
#include "marl/synthetic_corpus.hpp"
#include "test_util.hpp"

using namespace marl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Knobs {
  int seeds = 3;
  int frames_per_subject = 60;
  int stage1_steps = 150;
  int stage1_test_batches = 30;
  double inner_lr = 0.1;
  int relation_stage1_steps = 60;
  int relation_epochs = 8;
  fs::path scratch = fs::temp_directory_path() / "marl_acceptance";
};

std::string Num(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// Desk-scale region network: 224 input, 14x14x32 features, six AUs.
net::RegionConfig DeskRegion() {
  net::RegionConfig c;
  c.backbone.widths = {8, 16, 32, 32};
  c.backbone.kernels = {4, 3, 3, 3};
  c.backbone.strides = {4, 2, 2, 1};
  c.num_aus = 6;
  c.embed_dim = 64;
  c.head_hidden = 32;
  return c;
}

const std::vector<std::string> kAuIds{"1", "2", "6", "10", "12", "17"};

std::vector<std::string> AuNames(const std::vector<std::string>& ids) {
  std::vector<std::string> names;
  for (const auto& id : ids) names.push_back("AU" + id);
  return names;
}

net::RegionNetwork DeskNetwork() {
  return net::RegionNetwork(DeskRegion(), geometry::AUCenterTable::Bp4d().Select(kAuIds));
}

synth::CorpusSpec DeskCorpus(int frames_per_subject) {
  synth::CorpusSpec spec;
  spec.n_subjects = 12;
  spec.frames_per_subject = frames_per_subject;
  spec.au_ids = kAuIds;
  spec.identity_strength = 0.7;
  spec.seed = 1;
  return spec;
}

// ---------------------------------------------------------------------------
// 1. Loss oracles

Outcome LossOracles(const Knobs&) {
  using V = std::vector<double>;
  const V one{1.0};
  double value_err = 0.0;
  value_err = std::max(value_err, std::abs(loss::WeightedBce(V{0.5}, one, one) - std::log(2.0)));
  value_err = std::max(value_err, std::abs(loss::WeightedDice(V{0.0}, one, one, 1.0) - 0.5));
  value_err = std::max(value_err, std::abs(loss::WeightedDice(V{0.5}, one, one, 1.0) - (1.0 - 2.0 / 2.25)));
  value_err = std::max(value_err,
                       std::abs(loss::AuLoss(V{0.5}, one, one, {1.5, 1.0}) - (std::log(2.0) + 1.5 * (1.0 - 2.0 / 2.25))));
  const bool printed_ok = std::abs(loss::WeightedDice(V{0.5}, one, one, 1.0) - 0.1111) < 1e-4 &&
                          std::abs(loss::AuLoss(V{0.5}, one, one, {1.5, 1.0}) - 0.8598) < 1e-4;
  const V w = loss::ComputeWeights(V{0.5, 0.25, 0.25}).weights;
  value_err = std::max({value_err, std::abs(w[0] - 0.2), std::abs(w[1] - 0.4), std::abs(w[2] - 0.4)});

  double grad_err = 0.0;
  Rng rng = MakeStream(1, "acceptance/loss");
  for (int trial = 0; trial < 40; ++trial) {
    const int c = 1 + trial % 12;
    V ph(c), p(c), rates(c);
    for (int i = 0; i < c; ++i) {
      ph[i] = 0.02 + 0.96 * Uniform01(rng);
      p[i] = Uniform01(rng) < 0.5 ? 1.0 : 0.0;
      rates[i] = 0.05 + 0.95 * Uniform01(rng);
    }
    const V wt = loss::ComputeWeights(rates).weights;
    const loss::LossConfig cfg{1.5, 1.0};
    using Eval = std::function<double(const V&)>;
    auto check = [&](const V& analytic, const Eval& f) {
      double worst = 0.0, scale = 1.0;
      for (int i = 0; i < c; ++i) {
        V a = ph, b = ph;
        a[i] += 1e-6;
        b[i] -= 1e-6;
        const double num = (f(a) - f(b)) / 2e-6;
        scale = std::max(scale, std::abs(num));
        worst = std::max(worst, std::abs(num - analytic[i]));
      }
      grad_err = std::max(grad_err, worst / scale);
    };
    check(loss::WeightedBceGrad(ph, p, wt), [&](const V& x) { return loss::WeightedBce(x, p, wt); });
    check(loss::WeightedDiceGrad(ph, p, wt, 1.0), [&](const V& x) { return loss::WeightedDice(x, p, wt, 1.0); });
    check(loss::AuLossGrad(ph, p, wt, cfg), [&](const V& x) { return loss::AuLoss(x, p, wt, cfg); });
    // the differentiable batched form agrees with the closed form
    Tensor probs(Shape{1, c});
    probs.data = ph;
    Tensor labels(Shape{1, c});
    labels.data = p;
    loss::LossWeights lw = loss::ComputeWeights(rates);
    const ag::Var pv = ag::Parameter(probs);
    const Tensor g = ag::Grad(loss::AuLoss(pv, labels, lw, cfg), {pv})[0].value();
    const V closed = loss::AuLossGrad(ph, p, wt, cfg);
    for (int i = 0; i < c; ++i) grad_err = std::max(grad_err, std::abs(g.data[i] - closed[i]) / std::max(1.0, std::abs(closed[i])));
  }
  return {value_err < 1e-6 && grad_err < 1e-6 && printed_ok,
          "max value err " + Num(value_err) + ", max gradient rel err " + Num(grad_err)};
}

// ---------------------------------------------------------------------------
// 2. MAML oracles

ParameterSet ScalarTheta(double theta) {
  ParameterSet p;
  p.Add("theta", ag::Parameter(Tensor(Shape{1}, theta)));
  return p;
}

meta::LossFn Quadratic(double c) {
  return [c](const ParameterSet& p) { return ag::SumAll(ag::Pow(ag::AddScalar(p["theta"], -c), 2.0)); };
}

Outcome MamlOracles(const Knobs&) {
  const std::vector<double> cs{1.0, -0.5, 2.0, 0.25, 3.0};
  std::vector<meta::TaskLosses> tasks;
  for (double c : cs) tasks.push_back({Quadratic(c), Quadratic(c)});
  double second_err = 0.0, first_err = 0.0;
  for (double alpha : {0.01, 0.1, 0.25}) {
    for (double theta : {-1.0, 0.0, 0.8}) {
      double so = 0.0, fo = 0.0;
      for (double c : cs) {
        so += 2.0 * (1 - 2 * alpha) * (1 - 2 * alpha) * (theta - c) / cs.size();
        fo += 2.0 * ((1 - 2 * alpha) * theta + 2 * alpha * c - c) / cs.size();
      }
      second_err = std::max(second_err, std::abs(meta::ComputeMetaGradient(ScalarTheta(theta), tasks, alpha, 1,
                                                                          meta::Order::kSecond)
                                                     .grads[0]
                                                     .item() -
                                                 so));
      first_err = std::max(first_err, std::abs(meta::ComputeMetaGradient(ScalarTheta(theta), tasks, alpha, 1,
                                                                        meta::Order::kFirst)
                                                   .grads[0]
                                                   .item() -
                                               fo));
    }
  }
  const double inner1 = meta::InnerAdapt(ScalarTheta(0.0), Quadratic(1.0), 0.25, 1, meta::Order::kSecond)["theta"].item();
  const double inner2 = meta::InnerAdapt(ScalarTheta(0.0), Quadratic(1.0), 0.25, 2, meta::Order::kSecond)["theta"].item();
  const bool inner_ok = std::abs(inner1 - 0.5) < 1e-12 && std::abs(inner2 - 0.75) < 1e-12;

  // Composed map on a 4-8-2 sigmoid learner (58 parameters).
  ParameterSet theta;
  theta.Add("w1", ag::Parameter(test::RandomTensor(Shape{4, 8}, 1, 0.6)));
  theta.Add("b1", ag::Parameter(test::RandomTensor(Shape{8}, 2, 0.1)));
  theta.Add("w2", ag::Parameter(test::RandomTensor(Shape{8, 2}, 3, 0.6)));
  theta.Add("b2", ag::Parameter(test::RandomTensor(Shape{2}, 4, 0.1)));
  auto mse = [](Tensor x, Tensor y) -> meta::LossFn {
    return [x, y](const ParameterSet& p) {
      const ag::Var h = ag::Sigmoid(ag::AddBias(ag::MatMul(ag::Constant(x), p["w1"]), p["b1"]));
      return ag::MeanAll(ag::Pow(ag::Sub(ag::AddBias(ag::MatMul(h, p["w2"]), p["b2"]), ag::Constant(y)), 2.0));
    };
  };
  std::vector<meta::TaskLosses> learner_tasks;
  for (int t = 0; t < 3; ++t) {
    learner_tasks.push_back({mse(test::RandomTensor(Shape{5, 4}, 10 + t), test::RandomTensor(Shape{5, 2}, 20 + t)),
                             mse(test::RandomTensor(Shape{9, 4}, 30 + t), test::RandomTensor(Shape{9, 2}, 40 + t))});
  }
  const double alpha = 0.4;
  const int steps = 2;
  const meta::MetaGradient g = meta::ComputeMetaGradient(theta, learner_tasks, alpha, steps, meta::Order::kSecond);
  double worst = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    for (std::size_t e = 0; e < theta.vars()[i].value().size(); ++e) {
      auto shifted = [&](double d) {
        ParameterSet out;
        for (std::size_t j = 0; j < theta.size(); ++j) {
          Tensor t = theta.vars()[j].value();
          if (j == i) t.data[e] += d;
          out.Add(theta.names()[j], ag::Parameter(t));
        }
        return meta::ComputeMetaGradient(out, learner_tasks, alpha, steps, meta::Order::kSecond).outer_loss;
      };
      const double num = (shifted(1e-5) - shifted(-1e-5)) / 2e-5;
      scale = std::max(scale, std::abs(num));
      worst = std::max(worst, std::abs(num - g.grads[i].data[e]));
    }
  }
  const double fd_err = worst / scale;
  return {second_err < 1e-5 && first_err < 1e-9 && inner_ok && fd_err < 1e-3 && theta.NumScalars() <= 1000,
          "second-order err " + Num(second_err) + ", first-order err " + Num(first_err) + ", composed-map rel err " +
              Num(fd_err) + " over " + std::to_string(theta.NumScalars()) + " parameters"};
}

// ---------------------------------------------------------------------------
// 3. Sampler and geometry properties

Outcome SamplerGeometry(const Knobs&) {
  std::vector<std::string> problems;
  // Index with uneven subject sizes.
  std::vector<data::Subject> subjects;
  int id = 0;
  for (int s = 0; s < 12; ++s) {
    data::Subject sub{"S" + std::to_string(s), {}, -1};
    for (int f = 0; f < 20 + 7 * s; ++f) {
      data::FrameRecord r;
      r.id = id++;
      r.subject_id = sub.id;
      r.labels = {static_cast<std::uint8_t>(f % 2), static_cast<std::uint8_t>(f % 3 == 0)};
      sub.frames.push_back(r);
    }
    subjects.push_back(sub);
  }
  const data::SubjectIndex index = data::SplitFolds(data::SubjectIndex(subjects, 2), 3, 5);
  // fold partition
  std::set<std::string> seen_test;
  for (int fold = 0; fold < 3; ++fold) {
    const auto test_ids = index.SubjectIds(true, fold);
    const auto train_ids = index.SubjectIds(false, fold);
    if (test_ids.size() != 4 || train_ids.size() != 8) problems.push_back("unbalanced fold " + std::to_string(fold));
    for (const auto& t : test_ids) {
      if (std::find(train_ids.begin(), train_ids.end(), t) != train_ids.end()) problems.push_back("subject in both roles");
      if (!seen_test.insert(t).second) problems.push_back("subject tested twice");
    }
  }
  if (seen_test.size() != 12) problems.push_back("folds do not cover every subject");
  // 1000 episodes
  const data::EpisodeSampler sampler(index, data::FoldRole::kTrain, 1, 5, 15);
  const auto train_ids = index.SubjectIds(false, 1);
  Rng rng = MakeStream(3, "acceptance/sampling");
  int bad_episodes = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const data::MetaBatch batch = sampler.Sample(5, rng);
    std::set<std::string> tasks;
    for (const auto& ep : batch.episodes) {
      tasks.insert(ep.task_id);
      std::set<int> ids;
      bool ok = ep.support.size() == 5 && ep.query.size() == 15 &&
                std::find(train_ids.begin(), train_ids.end(), ep.task_id) != train_ids.end();
      for (const auto* part : {&ep.support, &ep.query}) {
        for (const auto& f : *part) {
          ok = ok && f.subject_id == ep.task_id;
          ids.insert(f.id);
        }
      }
      if (!ok || ids.size() != 20) ++bad_episodes;
    }
    if (tasks.size() != 5) ++bad_episodes;
  }
  if (bad_episodes) problems.push_back(std::to_string(bad_episodes) + " bad episodes");
  // crops
  int bad_crops = 0;
  const int g = 14, s = 6, d = 32;
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      Tensor fm(Shape{g, g, d}, 0.0);
      fm.data[(r * g + c) * d + 5] = 1.0;
      const Tensor crop = geometry::CropRegion(fm, {r, c}, s);
      const int top = std::clamp(r - s / 2, 0, g - s), left = std::clamp(c - s / 2, 0, g - s);
      double sum = 0.0;
      for (double v : crop.data) sum += v;
      if (crop.shape != Shape{s, s, d} || crop.data[((r - top) * s + (c - left)) * d + 5] != 1.0 || sum != 1.0) {
        ++bad_crops;
      }
    }
  }
  if (bad_crops) problems.push_back(std::to_string(bad_crops) + " bad crops");
  // mirror symmetry
  const data::Landmarks tmpl = synth::TemplateLandmarks(224);
  double mirror_err = 0.0;
  data::Landmarks jittered = tmpl;
  Rng jr = MakeStream(4, "acceptance/jitter");
  for (auto& p : jittered) {
    p.x += 2.0 * StandardNormal(jr);
    p.y += 2.0 * StandardNormal(jr);
  }
  for (const auto& table : {geometry::AUCenterTable::Bp4d(), geometry::AUCenterTable::Disfa()}) {
    const auto c = geometry::ComputeAUCenters(tmpl, table);
    for (int a = 0; a < table.size(); ++a) {
      mirror_err = std::max({mirror_err, std::abs(c[2 * a].x + c[2 * a + 1].x - 224.0),
                             std::abs(c[2 * a].y - c[2 * a + 1].y)});
    }
    const auto o = geometry::ComputeAUCenters(jittered, table);
    const auto f = geometry::ComputeAUCenters(geometry::MirrorLandmarks(jittered, 112.0), table);
    for (int a = 0; a < table.size(); ++a) {
      mirror_err = std::max({mirror_err, std::abs(f[2 * a].x - (224.0 - o[2 * a + 1].x)),
                             std::abs(f[2 * a].y - o[2 * a + 1].y), std::abs(f[2 * a + 1].x - (224.0 - o[2 * a].x))});
    }
  }
  if (mirror_err > 1e-9) problems.push_back("mirror error " + Num(mirror_err));
  std::string detail = "1000 meta-batches, 3 folds, 196 crops, mirror err " + Num(mirror_err);
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

// ---------------------------------------------------------------------------
// 4. Network invariants at desk width

ag::Var RowProbe(const ag::Var& out, int k, std::uint64_t seed) {
  Tensor w = test::RandomTensor(out.shape(), seed);
  const std::size_t row = out.value().size() / out.shape()[0];
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (static_cast<int>(i / row) != k) w.data[i] = 0.0;
  }
  return ag::SumAll(ag::Mul(out, ag::Constant(w)));
}

Outcome NetworkInvariants(const Knobs& knobs) {
  std::vector<std::string> problems;
  const net::RegionNetwork model = DeskNetwork();
  const ParameterSet params = model.Init(1);
  const test::TinyCorpus corpus = test::MakeTinyCorpus(DeskCorpus(24), 3);
  const auto& frames = corpus.index.subjects()[0].frames;
  const std::vector<data::FrameRecord> two(frames.begin(), frames.begin() + 2);

  // Branch locality
  const ag::Var feats = model.Features(params, ag::Constant(corpus.store->Batch(two)));
  const Tensor fm = feats.value();
  const net::CropCenters centers = model.Centers(corpus.store->BatchLandmarks(two));
  const int g = 14, d = 32, s = 6;
  int leaks = 0, fd_mismatch = 0;
  const Tensor base = model.Branches(params, ag::Constant(fm), centers).value();
  const std::size_t row = base.size() / 12;
  Rng rng = MakeStream(2, "acceptance/locality");
  for (int k = 0; k < 12; ++k) {
    const ag::Var x = ag::Parameter(fm);
    const Tensor grad = ag::Grad(RowProbe(model.Branches(params, x, centers), k, 50 + k), {x})[0].value();
    for (int b = 0; b < 2; ++b) {
      const geometry::GridCoord o = geometry::CropOrigin(centers[b][k], s, g);
      for (int r = 0; r < g; ++r)
        for (int c = 0; c < g; ++c) {
          const bool in = r >= o.row && r < o.row + s && c >= o.col && c < o.col + s;
          for (int ch = 0; ch < d && !in; ++ch) leaks += grad.data[((b * g + r) * g + c) * d + ch] != 0.0;
        }
    }
    // finite-difference spot checks outside window k
    const geometry::GridCoord o = geometry::CropOrigin(centers[0][k], s, g);
    for (int t = 0; t < 3; ++t) {
      int r, c;
      do {
        r = static_cast<int>(UniformIndex(rng, g));
        c = static_cast<int>(UniformIndex(rng, g));
      } while (r >= o.row && r < o.row + s && c >= o.col && c < o.col + s);
      Tensor shifted = fm;
      shifted.data[(r * g + c) * d + UniformIndex(rng, d)] += 1e-3;
      const Tensor out = model.Branches(params, ag::Constant(shifted), centers).value();
      for (std::size_t i = k * row; i < (k + 1) * row; ++i) fd_mismatch += (out.data[i] - base.data[i]) != 0.0;
    }
  }
  if (leaks) problems.push_back(std::to_string(leaks) + " cross-crop gradient entries");
  if (fd_mismatch) problems.push_back(std::to_string(fd_mismatch) + " outputs moved by out-of-window perturbations");

  // Probability range
  int out_of_range = 0;
  const std::vector<data::FrameRecord> batch(frames.begin(), frames.begin() + 12);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ag::NoGradGuard guard;
    const Tensor p = model
                         .Predict(model.Init(seed), ag::Constant(corpus.store->Batch(batch)),
                                  corpus.store->BatchLandmarks(batch))
                         .value();
    for (double v : p.data) out_of_range += !(v > 0.0 && v < 1.0);
  }
  if (out_of_range) problems.push_back(std::to_string(out_of_range) + " probabilities outside (0, 1)");

  // Checkpoint round trip
  fs::create_directories(knobs.scratch);
  Checkpoint ckpt;
  ckpt.fingerprint = model.Fingerprint();
  ckpt.tensors = params.ToTensors();
  SaveCheckpoint(knobs.scratch / "roundtrip.ckpt", ckpt);
  const Checkpoint back = LoadCheckpoint(knobs.scratch / "roundtrip.ckpt");
  bool exact = back.tensors.size() == ckpt.tensors.size() && back.fingerprint == ckpt.fingerprint;
  for (std::size_t i = 0; exact && i < ckpt.tensors.size(); ++i) {
    exact = back.tensors[i].name == ckpt.tensors[i].name && back.tensors[i].tensor.shape == ckpt.tensors[i].tensor.shape &&
            std::memcmp(back.tensors[i].tensor.ptr(), ckpt.tensors[i].tensor.ptr(),
                        ckpt.tensors[i].tensor.size() * sizeof(double)) == 0;
  }
  if (!exact) problems.push_back("checkpoint round trip not bit-exact");

  // Single-episode overfit
  const data::EpisodeSampler sampler(corpus.index, data::FoldRole::kTrain, 0, 5, 15);
  Rng srng = MakeStream(7, "acceptance/overfit");
  const data::Episode ep = sampler.Sample(1, srng).episodes[0];
  std::vector<data::FrameRecord> ep_frames = ep.support;
  ep_frames.insert(ep_frames.end(), ep.query.begin(), ep.query.end());
  const ag::Var images = ag::Constant(corpus.store->Batch(ep_frames));
  const auto lms = corpus.store->BatchLandmarks(ep_frames);
  const Tensor labels = data::LabelTensor(ep_frames);
  const loss::LossWeights weights = meta::TrainingWeights(corpus.index, 0, AuNames(kAuIds));
  meta::MetaState state;
  state.theta = model.Init(3);
  meta::AdamConfig adam;
  adam.lr = 0.003;
  double bce = 1e9;
  int steps = 0;
  while (steps < 200) {
    const ag::Var l = loss::WeightedBce(model.Predict(state.theta, images, lms), labels, weights);
    bce = l.item();
    if (bce < 0.05) break;
    std::vector<Tensor> grads;
    for (const auto& gr : ag::Grad(l, state.theta.vars())) grads.push_back(gr.value());
    state.theta = meta::AdamUpdate(state.theta, grads, state.adam, adam);
    ++steps;
  }
  if (!(bce < 0.05)) problems.push_back("overfit stalled at L_bce " + Num(bce));
  std::string detail = "locality over 12 branches, range, round trip; overfit L_bce " + Num(bce) + " after " +
                       std::to_string(steps) + " steps";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

// ---------------------------------------------------------------------------
// 5. Encoder invariants

rel::RelationModel DeskRelation(bool relational) {
  rel::EncoderConfig ec;
  ec.heads = 4;
  ec.relational = relational;
  return rel::RelationModel(DeskNetwork(), ec);
}

Outcome EncoderInvariants(const Knobs&) {
  const rel::RelationModel model = DeskRelation(true);
  const ParameterSet params = model.Init(4);
  const Tensor tokens = test::RandomTensor(Shape{4, 6, 64}, 8);
  const std::vector<int> perm{3, 5, 0, 1, 4, 2};
  auto permute = [&](const Tensor& t) {
    Tensor out(t.shape);
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 6; ++i)
        std::copy_n(t.ptr() + (b * 6 + perm[i]) * 64, 64, out.ptr() + (b * 6 + i) * 64);
    return out;
  };
  std::vector<Tensor> maps;
  const Tensor out = model.Encode(params, ag::Constant(tokens), nullptr, false, &maps).value();
  const double equiv_err = test::MaxAbsDiff(permute(out), model.Encode(params, ag::Constant(permute(tokens))).value());
  double row_err = 0.0;
  bool non_negative = true;
  for (const Tensor& a : maps) {
    for (std::size_t r = 0; r < a.size() / 6; ++r) {
      double sum = 0.0;
      for (int j = 0; j < 6; ++j) {
        sum += a.data[r * 6 + j];
        non_negative = non_negative && a.data[r * 6 + j] >= 0.0;
      }
      row_err = std::max(row_err, std::abs(sum - 1.0));
    }
  }

  // Full pipeline: images -> backbone -> crops -> branches -> merge -> encoder -> classifier -> L_au.
  const test::TinyCorpus corpus = test::MakeTinyCorpus(DeskCorpus(4), 3);
  const std::vector<data::FrameRecord> frames(corpus.index.subjects()[1].frames.begin(),
                                              corpus.index.subjects()[1].frames.begin() + 2);
  const ag::Var images = ag::Constant(corpus.store->Batch(frames));
  const auto lms = corpus.store->BatchLandmarks(frames);
  const Tensor labels = data::LabelTensor(frames);
  const loss::LossWeights weights = loss::ComputeWeights(std::vector<double>{0.3, 0.3, 0.4, 0.2, 0.5, 0.3});
  auto eval = [&](const ParameterSet& p) { return loss::AuLoss(model.Predict(p, images, lms), labels, weights, {}); };
  const std::vector<ag::Var> leaves = params.vars();
  const std::vector<ag::Var> grads = ag::Grad(eval(params), leaves);
  Rng rng = MakeStream(9, "acceptance/fd");
  double worst = 0.0, scale = 1.0;
  int probes = 0, kinks = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (int t = 0, tries = 0; t < 2 && tries < 8; ++tries) {
      const std::size_t e = UniformIndex(rng, params.vars()[i].value().size());
      auto shifted = [&](double delta) {
        ParameterSet q;
        for (std::size_t j = 0; j < params.size(); ++j) {
          Tensor v = params.vars()[j].value();
          if (j == i) v.data[e] += delta;
          q.Add(params.names()[j], ag::Constant(v));
        }
        ag::NoGradGuard guard;
        return eval(q).item();
      };
      // A ReLU pre-activation inside the probe radius makes the loss
      // piecewise linear there; the one-sided slopes disagree and the
      // coordinate is redrawn.
      const double h = 1e-6, f0 = shifted(0.0), fp = shifted(h), fm = shifted(-h);
      const double right = (fp - f0) / h, left = (f0 - fm) / h;
      if (std::abs(right - left) > 1e-4 * std::max(1.0, std::abs(right))) {
        ++kinks;
        continue;
      }
      const double num = (fp - fm) / (2 * h);
      scale = std::max(scale, std::abs(num));
      worst = std::max(worst, std::abs(num - grads[i].value().data[e]));
      ++probes;
      ++t;
    }
  }
  const double fd_err = worst / scale;
  return {equiv_err <= 1e-12 && row_err < 1e-6 && non_negative && fd_err < 1e-3 && probes == 2 * static_cast<int>(params.size()),
          "permutation err " + Num(equiv_err) + ", attention row err " + Num(row_err) + ", pipeline gradient rel err " +
              Num(fd_err) + " over " + std::to_string(probes) + " probes (" + std::to_string(kinks) +
              " redrawn at ReLU kinks)"};
}

// ---------------------------------------------------------------------------
// 6. Directional ablation

std::vector<std::vector<double>> EmbeddingMeans(const net::RegionNetwork& model, const ParameterSet& params,
                                                data::FrameStore& store, const std::vector<data::FrameRecord>& frames) {
  ag::NoGradGuard guard;
  std::vector<std::vector<double>> out;
  for (std::size_t start = 0; start < frames.size(); start += 32) {
    const std::vector<data::FrameRecord> chunk(frames.begin() + start,
                                               frames.begin() + std::min(frames.size(), start + 32));
    const Tensor tok = model.Embeddings(params, ag::Constant(store.Batch(chunk)), store.BatchLandmarks(chunk)).value();
    const int c = tok.dim(0), n = tok.dim(1), e = tok.dim(2);
    for (int i = 0; i < n; ++i) {
      std::vector<double> mean(e, 0.0);
      for (int a = 0; a < c; ++a)
        for (int k = 0; k < e; ++k) mean[k] += tok.data[(a * n + i) * e + k] / c;
      out.push_back(std::move(mean));
    }
  }
  return out;
}

Outcome Ablation(const Knobs& knobs) {
  // (a) meta-training vs plain supervision on held-out identities.
  const synth::CorpusSpec spec = DeskCorpus(knobs.frames_per_subject);
  const test::TinyCorpus corpus = test::MakeTinyCorpus(spec, 3);
  const net::RegionNetwork model = DeskNetwork();
  const int fold = 0;
  meta::MetaConfig mc;
  mc.epochs = 1;
  mc.batches_per_epoch = knobs.stage1_steps;
  mc.test_batches = knobs.stage1_test_batches;
  mc.inner_lr = knobs.inner_lr;
  const std::vector<data::FrameRecord> held_out = corpus.index.Frames(true, fold);
  std::vector<std::string> held_ids;
  for (const auto& f : held_out) held_ids.push_back(f.subject_id);

  std::vector<double> f1_delta, mix_delta;
  std::string per_seed;
  for (int seed = 0; seed < knobs.seeds; ++seed) {
    double f1[2], mix[2], plain_unadapted = 0.0;
    for (int plain = 0; plain < 2; ++plain) {
      meta::TrainOptions opts;
      opts.seed = static_cast<std::uint64_t>(seed);
      opts.plain = plain == 1;
      opts.resume = false;
      opts.out_dir = knobs.scratch / ("ablation_a_seed" + std::to_string(seed) + (plain ? "_plain" : "_meta"));
      fs::remove_all(opts.out_dir);
      const meta::TrainResult r = meta::RunMetaTraining(mc, {}, model, *corpus.store, corpus.index, fold, opts);
      f1[plain] = r.best_report.f1.average;
      const ParameterSet theta = meta::LoadMarlParameters(r.best_checkpoint, model, false);
      mix[plain] = synth::IdentityMixingScore(EmbeddingMeans(model, theta, *corpus.store, held_out), held_ids);
      if (plain) {
        // The baseline also gets its better protocol: no adaptation at test.
        meta::MetaConfig direct = mc;
        direct.test_inner_steps = 0;
        plain_unadapted = meta::MetaTest(model, theta, *corpus.store, corpus.index, fold, direct,
                                         meta::TrainingWeights(corpus.index, fold, AuNames(kAuIds)), opts.seed)
                              .f1.average;
      }
    }
    f1_delta.push_back(f1[0] - std::max(f1[1], plain_unadapted));
    mix_delta.push_back(mix[0] - mix[1]);
    per_seed += " [seed " + std::to_string(seed) + ": F1 meta " + Num(100 * f1[0]) + " plain " + Num(100 * f1[1]) + " (unadapted " + Num(100 * plain_unadapted) + ")" +
                ", mixing meta " + Num(mix[0]) + " plain " + Num(mix[1]) + "]";
  }

  // (b) relational vs token-independent classifier with AU1 => AU17 injected.
  synth::CorpusSpec dep = DeskCorpus(knobs.frames_per_subject);
  dep.seed = 2;
  dep.base_rates = {0.3, 0.3, 0.3, 0.3, 0.3, 0.05};
  dep.amplitudes = {1.0, 1.0, 1.0, 1.0, 1.0, 0.15};
  dep.implies = synth::ParseImplications("1>17:1", dep.au_ids);
  const test::TinyCorpus dep_corpus = test::MakeTinyCorpus(dep, 3);
  meta::MetaConfig pre = mc;
  pre.batches_per_epoch = knobs.relation_stage1_steps;
  pre.test_batches = 2;
  std::vector<double> b_delta;
  std::string per_seed_b;
  for (int seed = 0; seed < knobs.seeds; ++seed) {
    meta::TrainOptions opts;
    opts.seed = static_cast<std::uint64_t>(100 + seed);
    opts.resume = false;
    opts.out_dir = knobs.scratch / ("ablation_b_stage1_seed" + std::to_string(seed));
    fs::remove_all(opts.out_dir);
    const meta::TrainResult stage1 = meta::RunMetaTraining(pre, {}, model, *dep_corpus.store, dep_corpus.index, fold, opts);
    double f1_b[2];
    for (int relational = 0; relational < 2; ++relational) {
      const rel::RelationModel rm = DeskRelation(relational == 1);
      rel::RelationTrainConfig rc;
      rc.epochs = knobs.relation_epochs;
      rc.decay_every = std::max(1, knobs.relation_epochs / 3);
      meta::TrainOptions ro = opts;
      ro.out_dir = knobs.scratch / ("ablation_b_seed" + std::to_string(seed) + (relational ? "_rel" : "_ind"));
      fs::remove_all(ro.out_dir);
      const rel::TrainResult r = rel::RunRelationTraining(rc, {}, rm, *dep_corpus.store, dep_corpus.index, fold,
                                                          stage1.best_checkpoint, ro);
      f1_b[relational] = r.best_report.f1.per_au[5];
    }
    b_delta.push_back(f1_b[1] - f1_b[0]);
    per_seed_b += " [seed " + std::to_string(seed) + ": AU17 F1 relational " + Num(100 * f1_b[1]) + " independent " +
                  Num(100 * f1_b[0]) + "]";
  }
  const double da = Median(f1_delta), dm = Median(mix_delta), db = Median(b_delta);
  return {da > 0.0 && dm > 0.0 && db > 0.0,
          "median delta: (a) avg F1 vs best plain protocol " + Num(100 * da) + " pts, mixing " + Num(dm) + "; (b) AU17 F1 " + Num(100 * db) +
              " pts;" + per_seed + per_seed_b};
}

// ---------------------------------------------------------------------------
// 7. Determinism of CLI commands

int RunCli(const std::string& args) {
  const std::string cmd = std::string("\"") + MARL_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string ReadAll(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome Determinism(const Knobs& knobs) {
  const fs::path root = knobs.scratch / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "corpus.cfg") << "n_subjects = 6\nframes_per_subject = 12\nau_ids = 1,12,17\n"
                                        "image_side = 32\npattern_sigma = 2\nlandmark_jitter = 0.3\nseed = 5\n";
  std::vector<std::string> problems;
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    if (RunCli("synth-gen --corpus " + (root / "corpus.cfg").string() + " --out " + (dir / "corpus").string()) != 0) {
      problems.push_back("synth-gen failed");
    }
  }
  for (const auto& f : {"manifest.txt", "corpus.cfg", "run.cfg", "images/S03_0007.ppm"}) {
    if (ReadAll(root / "a" / "corpus" / f) != ReadAll(root / "b" / "corpus" / f)) problems.push_back(std::string(f) + " differs");
  }
  std::ofstream(root / "run.cfg") << "manifest = a/corpus/manifest.txt\nau-ids = 1,12,17\ninput-side = 32\n"
                                     "feature-side = 8\nwidths = 4,4,4,4\nstrides = 2,2,1,1\ncrop-size = 3\n"
                                     "embed-dim = 4\nhead-hidden = 4\nenc-heads = 2\nenc-ffn = 8\ntasks = 2\n"
                                     "support = 2\nquery = 4\nepochs = 2\nbatches-per-epoch = 2\ntest-batches = 2\n"
                                     "rel-epochs = 2\nrel-train-batch = 8\nseed = 17\n";
  const std::string cfg = "--config " + (root / "run.cfg").string();
  struct Step {
    std::string command, report;
  };
  for (const char* run : {"a", "b"}) {
    const fs::path out = root / run;
    const std::string ckpt = (root / "a" / "s1" / "marl_best.ckpt").string();
    int rc = RunCli("marl-train " + cfg + " --out " + (out / "s1").string());
    rc |= RunCli("relation-train " + cfg + " --out " + (out / "s2").string() + " --marl-ckpt " + ckpt);
    rc |= RunCli("evaluate " + cfg + " --out " + (out / "ev").string() + " --ckpt " +
                 (root / "a" / "s2" / "relation_best.ckpt").string());
    rc |= RunCli("crossval " + cfg + " --out " + (out / "cv").string());
    if (rc != 0) problems.push_back(std::string("a command failed in run ") + run);
  }
  int compared = 0;
  for (const auto& f : {"s1/marl_report.txt", "s1/marl_train.log", "s1/marl_metrics.log", "s2/relation_report.txt",
                        "s2/relation_train.log", "ev/eval_report.txt", "cv/crossval_report.txt",
                        "cv/fold_1/relation_report.txt", "s1/marl_best.ckpt", "s2/relation_best.ckpt"}) {
    const std::string a = ReadAll(root / "a" / f), b = ReadAll(root / "b" / f);
    if (a.empty() || a != b) problems.push_back(std::string(f) + " differs or is missing");
    ++compared;
  }
  std::string detail = std::to_string(compared) + " report, log and checkpoint files compared across reruns";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  Knobs knobs;
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--seeds", knobs.seeds);
  app.add_option("--frames", knobs.frames_per_subject);
  app.add_option("--stage1-steps", knobs.stage1_steps);
  app.add_option("--stage1-test-batches", knobs.stage1_test_batches);
  app.add_option("--inner-lr", knobs.inner_lr);
  app.add_option("--relation-stage1-steps", knobs.relation_stage1_steps);
  app.add_option("--relation-epochs", knobs.relation_epochs);
  app.add_option("--scratch", knobs.scratch);
  CLI11_PARSE(app, argc, argv);
  SetLogLevel(LogLevel::kQuiet);

  struct Criterion {
    std::string name;
    std::function<Outcome(const Knobs&)> run;
    double cpu_limit;  // seconds, 0 for none
  };
  const std::vector<Criterion> criteria{
      {"loss oracles", LossOracles, 1},
      {"MAML closed-form oracles", MamlOracles, 10},
      {"sampler and geometry properties", SamplerGeometry, 30},
      {"network invariants at desk width", NetworkInvariants, 300},
      {"encoder invariants", EncoderInvariants, 0},
      {"directional ablation", Ablation, 1800},
      {"determinism", Determinism, 0},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    const std::clock_t start = std::clock();
    Outcome outcome;
    try {
      outcome = criteria[i].run(knobs);
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double cpu = static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC;
    if (criteria[i].cpu_limit > 0 && cpu >= criteria[i].cpu_limit) {
      outcome.pass = false;
      outcome.detail += "; over the " + Num(criteria[i].cpu_limit) + " s CPU limit";
    }
    failures += !outcome.pass;
    std::cout << (outcome.pass ? "PASS" : "FAIL") << " criterion " << number << " (" << criteria[i].name << ", "
              << Num(cpu, 3) << " s CPU): " << outcome.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
