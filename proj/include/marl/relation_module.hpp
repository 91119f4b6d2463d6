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

#include "marl/image.hpp"
#include "marl/losses_metrics.hpp"
#include "marl/maml_engine.hpp"
#include "marl/parameter_set.hpp"
#include "marl/region_network.hpp"
#include "marl/rng.hpp"

namespace marl::rel {

struct EncoderConfig {
  int layers = 2;
  int heads = 5;  // divides the default width of 150
  int ffn_width = 0;  // 0 means 4 * E
  double dropout = 0.1;
  // false gives the token-independent baseline: no encoder at all, the
  // classifier sees each AU embedding on its own.
  bool relational = true;

  void Validate(int embed_dim) const;
  int ResolvedFfn(int embed_dim) const { return ffn_width > 0 ? ffn_width : 4 * embed_dim; }
};

// Stage-2 model: the region network without its stage-1 head, a pre-norm
// transformer encoder over the C merged AU tokens (no positional encoding)
// and per-AU two-layer classifiers.
//
// Encoder layer l: x += Attn(LN(x)); x += FFN(LN(x)). There is no final
// norm, so zeroing every attention output projection and second FFN
// matrix turns the encoder into the identity.
class RelationModel {
 public:
  RelationModel(net::RegionNetwork region, EncoderConfig encoder);

  const net::RegionNetwork& region() const { return region_; }
  const EncoderConfig& encoder() const { return encoder_; }
  std::string Fingerprint() const;

  // Encoder and classifier parameters only.
  ParameterSet InitTop(std::uint64_t seed) const;
  // Region parameters (stage-1 head excluded) plus a fresh top.
  ParameterSet Init(std::uint64_t seed) const;
  // Stage-1 checkpoint minus its `head.*` tensors, plus a fresh top. A
  // missing or mismatched tensor, or an unreadable archive, is an ImportError.
  ParameterSet ImportMarl(const std::filesystem::path& path, std::uint64_t seed, bool force) const;

  // tokens [N, C, E] -> [N, C, E]. When `attention` is given it receives one
  // [N, heads, C, C] tensor per layer. `rng` is only used while training.
  ag::Var Encode(const ParameterSet& params, const ag::Var& tokens, Rng* rng = nullptr, bool training = false,
                 std::vector<Tensor>* attention = nullptr) const;
  // tokens [N, C, E] -> logits [N, C]
  ag::Var Classify(const ParameterSet& params, const ag::Var& tokens) const;
  // Probabilities [N, C].
  ag::Var Predict(const ParameterSet& params, const ag::Var& images, const std::vector<data::Landmarks>& landmarks,
                  Rng* rng = nullptr, bool training = false) const;

 private:
  net::RegionNetwork region_;
  EncoderConfig encoder_;
};

// Names of stage-1 parameters that survive the import.
bool IsStageOneHead(const std::string& name);
bool IsRegionParameter(const std::string& name);

ag::Var LayerNorm(const ag::Var& x, const ag::Var& gain, const ag::Var& bias, double eps = 1e-5);

struct RelationTrainConfig {
  int epochs = 30;
  int train_batch = 16;
  int test_batch = 32;
  double lr = 0.006;
  double decay = 0.3;
  int decay_every = 2;
  bool freeze_backbone = false;
  meta::AdamConfig adam;  // adam.lr is replaced by the schedule

  void Validate() const;
  // Learning rate used during 0-based epoch `epoch`.
  double LearningRate(int epoch) const;
};

struct EvalReport {
  loss::ConfusionCounts counts;
  loss::F1Report f1;
};

EvalReport Evaluate(const RelationModel& model, const ParameterSet& params, data::FrameStore& store,
                    const std::vector<data::FrameRecord>& frames, int batch_size);

struct TrainResult {
  std::filesystem::path best_checkpoint;
  double best_score = 0.0;
  EvalReport best_report;
};

// Plain supervised training of the full stage-2 model on every training-fold
// frame, evaluated on the test fold after each epoch. Writes
// relation_train.log (`epoch step loss`), relation_metrics.log,
// relation_epoch_<n>.ckpt (latest only) and relation_best.ckpt; resumes
// from the latest epoch checkpoint.
TrainResult RunRelationTraining(const RelationTrainConfig& config, const loss::LossConfig& loss_config,
                                const RelationModel& model, data::FrameStore& store, const data::SubjectIndex& index,
                                int fold, const std::filesystem::path& marl_checkpoint,
                                const meta::TrainOptions& options);

ParameterSet LoadRelationParameters(const std::filesystem::path& path, const RelationModel& model, bool force);

}  // namespace marl::rel
