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
#include <functional>
#include <string>
#include <vector>

#include "marl/image.hpp"
#include "marl/losses_metrics.hpp"
#include "marl/meta_dataset.hpp"
#include "marl/parameter_set.hpp"
#include "marl/region_network.hpp"

namespace marl::meta {

enum class Order { kFirst, kSecond };

struct AdamConfig {
  double lr = 0.006;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct MetaConfig {
  double inner_lr = 0.01;     // alpha
  int inner_steps = 1;        // during meta-training
  int test_inner_steps = 5;   // during meta-testing
  int tasks = 5;              // K
  int support = 5;            // S
  int query = 15;             // Q
  int batches_per_epoch = 100;
  int epochs = 100;
  int test_batches = 600;
  Order order = Order::kSecond;
  AdamConfig adam;  // outer optimizer; adam.lr is beta

  void Validate() const;
};

// Bias-corrected Adam moments, one pair per parameter tensor.
struct AdamState {
  long long step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

// Returns fresh leaves theta - lr * m_hat / (sqrt(v_hat) + eps).
ParameterSet AdamUpdate(const ParameterSet& theta, const std::vector<Tensor>& grads, AdamState& state,
                        const AdamConfig& config);

using LossFn = std::function<ag::Var(const ParameterSet&)>;

// `steps` plain gradient steps on `loss`. In second-order mode the result
// stays on the graph as a function of theta; in first-order mode each step
// subtracts a constant, so d(result)/d(theta) is the identity.
// A non-finite loss raises AdaptationError(batch_id).
ParameterSet InnerAdapt(const ParameterSet& theta, const LossFn& loss, double alpha, int steps, Order order,
                        int batch_id = -1, double* first_loss = nullptr);

struct TaskLosses {
  LossFn inner;  // evaluated on the support set
  LossFn outer;  // evaluated on the query set
};

struct MetaGradient {
  std::vector<Tensor> grads;  // d/d theta of the mean outer loss
  double inner_loss = 0.0;    // mean pre-adaptation support loss
  double outer_loss = 0.0;    // mean post-adaptation query loss
};

// Tasks are processed one at a time so only one episode's graph is alive.
MetaGradient ComputeMetaGradient(const ParameterSet& theta, const std::vector<TaskLosses>& tasks,
                                 double alpha, int steps, Order order, int batch_id = -1);

struct MetaState {
  ParameterSet theta;
  AdamState adam;
  int epoch = 0;            // completed epochs
  long long outer_steps = 0;
  double best_score = -1.0;
  std::string best_path;
};

struct StepResult {
  double inner_loss = 0.0;
  double outer_loss = 0.0;
};

// One meta-update. A non-finite meta-gradient leaves `state` untouched and
// raises AdaptationError.
StepResult OuterStep(MetaState& state, const std::vector<TaskLosses>& tasks, const MetaConfig& config,
                     int batch_id = -1);

// Model-bound losses for one episode: weighted cross entropy on the support
// set (inner) and the full AU loss on the query set (outer).
TaskLosses MakeTaskLosses(const net::RegionNetwork& model, data::FrameStore& store, const data::Episode& episode,
                          const loss::LossWeights& weights, const loss::LossConfig& loss_config);

struct MetaTestReport {
  loss::ConfusionCounts counts;
  loss::F1Report f1;
  int episodes = 0;
};

// Samples config.test_batches batches of K test-fold episodes (fewer when
// the fold has fewer eligible subjects); for each,
// adapts a copy of theta0 on the support (adaptation) set for
// config.test_inner_steps steps and scores the query (test) set.
MetaTestReport MetaTest(const net::RegionNetwork& model, const ParameterSet& theta0, data::FrameStore& store,
                        const data::SubjectIndex& index, int fold, const MetaConfig& config,
                        const loss::LossWeights& weights, std::uint64_t seed);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  // Same sampling and outer-step budget, but Adam on the plain AU loss of
  // all episode frames with no inner loop: the supervised baseline.
  bool plain = false;
  bool resume = true;
  bool force = false;
  std::filesystem::path pretrained_backbone;
};

struct TrainResult {
  std::filesystem::path best_checkpoint;
  double best_score = 0.0;
  MetaTestReport best_report;
};

// Epochs x batches_per_epoch outer steps with a meta-test after every epoch.
// Writes marl_train.log (`epoch step inner_loss outer_loss`), marl_metrics.log,
// marl_epoch_<n>.ckpt (latest only) and marl_best.ckpt. Resumes from the
// latest epoch checkpoint in out_dir.
TrainResult RunMetaTraining(const MetaConfig& config, const loss::LossConfig& loss_config,
                            const net::RegionNetwork& model, data::FrameStore& store,
                            const data::SubjectIndex& index, int fold, const TrainOptions& options);

// Training-fold occurrence rates turned into loss weights.
loss::LossWeights TrainingWeights(const data::SubjectIndex& index, int fold, const std::vector<std::string>& au_names);

// Loads a parameter archive written by RunMetaTraining, checking that it was
// produced for `model`'s configuration.
ParameterSet LoadMarlParameters(const std::filesystem::path& path, const net::RegionNetwork& model, bool force);

// Highest n among <prefix>_epoch_<n>.ckpt in dir, or 0.
int LatestEpochCheckpoint(const std::filesystem::path& dir, const std::string& prefix);
// Drops log lines whose leading epoch number is past `epoch`.
void TrimEpochLog(const std::filesystem::path& path, int epoch);

}  // namespace marl::meta
