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

#include <span>
#include <string>
#include <vector>

#include "marl/autograd.hpp"
#include "marl/tensor.hpp"

namespace marl::loss {

inline constexpr double kProbClamp = 1e-7;

// w_i = (1 / r_i) / sum_u (1 / r_u), r_i the training-set occurrence rate.
struct LossWeights {
  std::vector<double> weights;
  std::vector<double> rates;
};

struct LossConfig {
  double mu = 1.5;       // weight of the Dice term
  double epsilon = 1.0;  // Dice smoothing
};

// Throws DegenerateDataError naming the AU when a rate is not in (0, 1].
LossWeights ComputeWeights(std::span<const double> rates, std::span<const std::string> au_names = {});

// Single-frame losses over C AUs. p_hat is clamped to [1e-7, 1 - 1e-7]
// before the logarithms of the cross entropy.
double WeightedBce(std::span<const double> p_hat, std::span<const double> p, std::span<const double> w);
double WeightedDice(std::span<const double> p_hat, std::span<const double> p, std::span<const double> w,
                    double epsilon);
double AuLoss(std::span<const double> p_hat, std::span<const double> p, std::span<const double> w,
              const LossConfig& config);

// Closed-form derivatives of the above w.r.t. p_hat.
std::vector<double> WeightedBceGrad(std::span<const double> p_hat, std::span<const double> p,
                                    std::span<const double> w);
std::vector<double> WeightedDiceGrad(std::span<const double> p_hat, std::span<const double> p,
                                     std::span<const double> w, double epsilon);
std::vector<double> AuLossGrad(std::span<const double> p_hat, std::span<const double> p,
                               std::span<const double> w, const LossConfig& config);

// Batched, differentiable versions: p_hat [N, C] probabilities, labels
// [N, C] in {0, 1}. Averaged over the N frames.
ag::Var WeightedBce(const ag::Var& p_hat, const Tensor& labels, const LossWeights& w);
ag::Var WeightedDice(const ag::Var& p_hat, const Tensor& labels, const LossWeights& w, double epsilon);
ag::Var AuLoss(const ag::Var& p_hat, const Tensor& labels, const LossWeights& w, const LossConfig& config);

// Per-AU confusion counts, accumulated across batches.
class ConfusionCounts {
 public:
  explicit ConfusionCounts(int num_labels = 0);

  // preds and labels are [N, C] in {0, 1}.
  void Add(const Tensor& preds, const Tensor& labels);
  void Merge(const ConfusionCounts& other);

  int num_labels() const { return static_cast<int>(tp_.size()); }
  long long tp(int c) const { return tp_[c]; }
  long long fp(int c) const { return fp_[c]; }
  long long fn(int c) const { return fn_[c]; }

 private:
  std::vector<long long> tp_, fp_, fn_;
};

struct F1Report {
  std::vector<double> per_au;   // in [0, 1]
  double average = 0.0;         // unweighted mean over AUs
  std::vector<bool> undefined;  // 2TP + FP + FN == 0; F1 reported as 0
};

F1Report F1FromCounts(const ConfusionCounts& counts);
// F1 = 2TP / (2TP + FP + FN) per AU; zero division gives 0.
F1Report F1Frame(const Tensor& preds, const Tensor& labels);

// p >= 0.5 -> 1.
Tensor Threshold(const Tensor& probabilities, double threshold = 0.5);

// Text table, one row per AU plus an Avg row, F1 in percent with one decimal.
std::string FormatF1Table(const F1Report& report, const std::vector<std::string>& au_names,
                          const std::vector<std::string>& header_comments = {});

}  // namespace marl::loss
