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

#include "marl/losses_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "marl/errors.hpp"

namespace marl::loss {
namespace {

double ClampProb(double q) { return std::clamp(q, kProbClamp, 1.0 - kProbClamp); }

void CheckLengths(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || a != c) throw ShapeError("loss inputs differ in length");
}

double DiceRatio(double q, double p, double eps) { return (2.0 * p * q + eps) / (p * p + q * q + eps); }

ag::Var WeightsBroadcast(const ag::Var& term, const LossWeights& w) {
  return ag::MulLast(term, ag::Constant(Tensor(Shape{static_cast<int>(w.weights.size())}, w.weights)));
}

void CheckBatch(const ag::Var& p_hat, const Tensor& labels, const LossWeights& w) {
  if (p_hat.shape().size() != 2 || p_hat.shape() != labels.shape) {
    throw ShapeError("loss expects matching [N, C] predictions and labels, got " + ShapeString(p_hat.shape()) +
                     " and " + ShapeString(labels.shape));
  }
  if (static_cast<std::size_t>(p_hat.shape()[1]) != w.weights.size()) {
    throw ShapeError("loss weights do not match the label count");
  }
}

}  // namespace

LossWeights ComputeWeights(std::span<const double> rates, std::span<const std::string> au_names) {
  LossWeights out;
  double total = 0.0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (!(rates[i] > 0.0) || rates[i] > 1.0) {
      const std::string name = i < au_names.size() ? au_names[i] : std::to_string(i);
      throw DegenerateDataError("AU " + name + " has occurrence rate " + std::to_string(rates[i]) +
                                " in the training set; weights need rates in (0, 1] (exclude the AU)");
    }
    total += 1.0 / rates[i];
  }
  out.rates.assign(rates.begin(), rates.end());
  for (double r : rates) out.weights.push_back((1.0 / r) / total);
  return out;
}

double WeightedBce(std::span<const double> p_hat, std::span<const double> p, std::span<const double> w) {
  CheckLengths(p_hat.size(), p.size(), w.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = ClampProb(p_hat[i]);
    loss -= w[i] * (p[i] * std::log(q) + (1.0 - p[i]) * std::log(1.0 - q));
  }
  return loss;
}

double WeightedDice(std::span<const double> p_hat, std::span<const double> p, std::span<const double> w,
                    double epsilon) {
  CheckLengths(p_hat.size(), p.size(), w.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) loss += w[i] * (1.0 - DiceRatio(p_hat[i], p[i], epsilon));
  return loss;
}

double AuLoss(std::span<const double> p_hat, std::span<const double> p, std::span<const double> w,
              const LossConfig& config) {
  return WeightedBce(p_hat, p, w) + config.mu * WeightedDice(p_hat, p, w, config.epsilon);
}

std::vector<double> WeightedBceGrad(std::span<const double> p_hat, std::span<const double> p,
                                    std::span<const double> w) {
  CheckLengths(p_hat.size(), p.size(), w.size());
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = p_hat[i];
    if (q < kProbClamp || q > 1.0 - kProbClamp) continue;
    g[i] = -w[i] * (p[i] / q - (1.0 - p[i]) / (1.0 - q));
  }
  return g;
}

std::vector<double> WeightedDiceGrad(std::span<const double> p_hat, std::span<const double> p,
                                     std::span<const double> w, double epsilon) {
  CheckLengths(p_hat.size(), p.size(), w.size());
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = p_hat[i];
    const double num = 2.0 * p[i] * q + epsilon;
    const double den = p[i] * p[i] + q * q + epsilon;
    g[i] = -w[i] * (2.0 * p[i] * den - num * 2.0 * q) / (den * den);
  }
  return g;
}

std::vector<double> AuLossGrad(std::span<const double> p_hat, std::span<const double> p,
                               std::span<const double> w, const LossConfig& config) {
  std::vector<double> g = WeightedBceGrad(p_hat, p, w);
  const std::vector<double> d = WeightedDiceGrad(p_hat, p, w, config.epsilon);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += config.mu * d[i];
  return g;
}

ag::Var WeightedBce(const ag::Var& p_hat, const Tensor& labels, const LossWeights& w) {
  CheckBatch(p_hat, labels, w);
  Tensor neg(labels.shape);
  for (std::size_t i = 0; i < labels.size(); ++i) neg.data[i] = 1.0 - labels.data[i];
  ag::Var q = ag::Clamp(p_hat, kProbClamp, 1.0 - kProbClamp);
  ag::Var ll = ag::Add(ag::Mul(ag::Constant(labels), ag::Log(q)),
                       ag::Mul(ag::Constant(std::move(neg)), ag::Log(ag::AddScalar(ag::Neg(q), 1.0))));
  const double n = static_cast<double>(labels.shape[0]);
  return ag::Scale(ag::SumAll(WeightsBroadcast(ll, w)), -1.0 / n);
}

ag::Var WeightedDice(const ag::Var& p_hat, const Tensor& labels, const LossWeights& w, double epsilon) {
  CheckBatch(p_hat, labels, w);
  Tensor p_sq(labels.shape);
  for (std::size_t i = 0; i < labels.size(); ++i) p_sq.data[i] = labels.data[i] * labels.data[i];
  ag::Var num = ag::AddScalar(ag::Scale(ag::Mul(ag::Constant(labels), p_hat), 2.0), epsilon);
  ag::Var den = ag::AddScalar(ag::Add(ag::Constant(std::move(p_sq)), ag::Mul(p_hat, p_hat)), epsilon);
  ag::Var term = ag::AddScalar(ag::Neg(ag::Mul(num, ag::Reciprocal(den))), 1.0);
  const double n = static_cast<double>(labels.shape[0]);
  return ag::Scale(ag::SumAll(WeightsBroadcast(term, w)), 1.0 / n);
}

ag::Var AuLoss(const ag::Var& p_hat, const Tensor& labels, const LossWeights& w, const LossConfig& config) {
  ag::Var bce = WeightedBce(p_hat, labels, w);
  if (config.mu == 0.0) return bce;
  return ag::Add(bce, ag::Scale(WeightedDice(p_hat, labels, w, config.epsilon), config.mu));
}

ConfusionCounts::ConfusionCounts(int num_labels) : tp_(num_labels, 0), fp_(num_labels, 0), fn_(num_labels, 0) {}

void ConfusionCounts::Add(const Tensor& preds, const Tensor& labels) {
  if (preds.shape != labels.shape || preds.rank() != 2 || preds.dim(1) != num_labels()) {
    throw ShapeError("F1: predictions " + ShapeString(preds.shape) + " vs labels " + ShapeString(labels.shape));
  }
  const int c = num_labels();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool pred = preds.data[i] >= 0.5;
    const bool truth = labels.data[i] >= 0.5;
    const std::size_t au = i % c;
    if (pred && truth) ++tp_[au];
    else if (pred) ++fp_[au];
    else if (truth) ++fn_[au];
  }
}

void ConfusionCounts::Merge(const ConfusionCounts& other) {
  if (other.num_labels() != num_labels()) throw ShapeError("F1: merging counts of different widths");
  for (int c = 0; c < num_labels(); ++c) {
    tp_[c] += other.tp_[c];
    fp_[c] += other.fp_[c];
    fn_[c] += other.fn_[c];
  }
}

F1Report F1FromCounts(const ConfusionCounts& counts) {
  F1Report r;
  const int c = counts.num_labels();
  for (int i = 0; i < c; ++i) {
    const long long denom = 2 * counts.tp(i) + counts.fp(i) + counts.fn(i);
    r.undefined.push_back(denom == 0);
    r.per_au.push_back(denom == 0 ? 0.0 : 2.0 * counts.tp(i) / static_cast<double>(denom));
  }
  double total = 0.0;
  for (double f : r.per_au) total += f;
  r.average = c > 0 ? total / c : 0.0;
  return r;
}

F1Report F1Frame(const Tensor& preds, const Tensor& labels) {
  if (preds.rank() != 2) throw ShapeError("F1: expected [N, C] predictions, got " + ShapeString(preds.shape));
  ConfusionCounts counts(preds.dim(1));
  counts.Add(preds, labels);
  return F1FromCounts(counts);
}

Tensor Threshold(const Tensor& probabilities, double threshold) {
  Tensor out(probabilities.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = probabilities.data[i] >= threshold ? 1.0 : 0.0;
  return out;
}

std::string FormatF1Table(const F1Report& report, const std::vector<std::string>& au_names,
                          const std::vector<std::string>& header_comments) {
  std::ostringstream os;
  for (const auto& line : header_comments) os << "# " << line << '\n';
  char buf[64];
  os << "AU\tF1\n";
  for (std::size_t i = 0; i < report.per_au.size(); ++i) {
    const std::string name = i < au_names.size() ? au_names[i] : std::to_string(i);
    std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * report.per_au[i]);
    os << name << '\t' << buf;
    if (i < report.undefined.size() && report.undefined[i]) os << "\t(undefined: no positives)";
    os << '\n';
  }
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * report.average);
  os << "Avg\t" << buf << '\n';
  return os.str();
}

}  // namespace marl::loss
