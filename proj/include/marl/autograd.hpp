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

#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "marl/tensor.hpp"

// Reverse-mode automatic differentiation over dense tensors.
//
// Every backward rule is itself written with differentiable ops, so
// Grad(..., create_graph = true) returns gradients that can be
// differentiated again. The meta-learning outer loop relies on this to
// differentiate through the inner gradient step.
namespace marl::ag {

class Var;

struct Node;
using BackwardFn = std::function<std::vector<Var>(const Node& self, const Var& grad)>;

struct Node : std::enable_shared_from_this<Node> {
  Tensor value;
  std::vector<Var> parents;
  BackwardFn backward;
  bool requires_grad = false;
  const char* op = "leaf";
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }

  // Same value, cut from the graph.
  Var Detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var MakeResult(Tensor, std::vector<Var>, BackwardFn, const char*);
  std::shared_ptr<Node> node_;
};

// Records a new node when grad mode is on and any parent requires grad.
Var MakeResult(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op);

bool GradEnabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// d output / d inputs for a scalar output. Inputs the output does not depend
// on get a zero gradient. With create_graph the results carry their own graph.
std::vector<Var> Grad(const Var& output, const std::vector<Var>& inputs, bool create_graph = false);

Var Constant(Tensor t);
Var Parameter(Tensor t);

// Elementwise, identical shapes.
Var Add(const Var& a, const Var& b);
Var Sub(const Var& a, const Var& b);
Var Mul(const Var& a, const Var& b);
Var Neg(const Var& a);
Var Scale(const Var& a, double s);
Var AddScalar(const Var& a, double s);

Var Relu(const Var& a);
Var Sigmoid(const Var& a);
Var Log(const Var& a);
Var Exp(const Var& a);
Var Pow(const Var& a, double p);
Var Reciprocal(const Var& a);
// Gradient passes only where lo <= a <= hi.
Var Clamp(const Var& a, double lo, double hi);

Var Reshape(const Var& a, Shape shape);
Var Permute(const Var& a, const std::vector<int>& perm);

// [B,F] -> [B,M,F] and its adjoint [B,M,F] -> [B,F].
Var BroadcastMid(const Var& a, int m);
Var SumMid(const Var& a);

// Batched matmul: a [B,M,K] (or [B,K,M] if trans_a) times b [B,K,N]
// (or [B,N,K] if trans_b) -> [B,M,N].
Var BatchMatMul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
// 2-D convenience wrapper over BatchMatMul.
Var MatMul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

// Composites built from the primitives above.
Var SumAll(const Var& a);
Var MeanAll(const Var& a);
Var AddBias(const Var& x, const Var& bias);          // x [...,F] + bias [F]
Var MulLast(const Var& x, const Var& gain);          // x [...,F] * gain [F]
Var SumLastKeep(const Var& x);                       // [...,F] -> [...,1]
Var ExpandLast(const Var& x, int f);                 // [...,1] -> [...,F]
Var MeanLastKeep(const Var& x);
Var SoftmaxLast(const Var& x);
Var Dropout(const Var& x, double rate, std::mt19937_64& rng, bool training);

// NHWC convolution with weights [KH,KW,Cin,Cout].
struct ConvGeometry {
  int n = 0, h = 0, w = 0, cin = 0, cout = 0;
  int kh = 0, kw = 0, stride = 1, pad = 0;
  int ho = 0, wo = 0;
};
ConvGeometry MakeConvGeometry(const Shape& input, const Shape& weight, int stride, int pad);

Var Conv2d(const Var& x, const Var& w, int stride, int pad);
// Adjoints of Conv2d w.r.t. its input and weight; bilinear, so each is
// differentiable in terms of the other two.
Var Conv2dInputGrad(const Var& grad_out, const Var& w, const ConvGeometry& g);
Var Conv2dWeightGrad(const Var& x, const Var& grad_out, const ConvGeometry& g);

// Gathers size x size windows of a [N,H,W,D] map. `origins` holds, for
// every sample n and window b, the (row, col) of the window's top-left cell
// at index 2 * (n * windows + b). Output is [windows, N, size*size*D].
struct CropPlan {
  int n = 0, h = 0, w = 0, d = 0;
  int windows = 0, size = 0;
  std::vector<int> origins;
};
Var CropWindows(const Var& feature_map, std::shared_ptr<const CropPlan> plan);
Var ScatterWindows(const Var& windows, std::shared_ptr<const CropPlan> plan);

}  // namespace marl::ag
