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

#include "marl/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "marl/errors.hpp"
#include "marl/simd/kernels.hpp"

namespace marl::ag {
namespace {

thread_local bool g_grad_enabled = true;

const simd::KernelTable& K() { return simd::Active(); }

void RequireSameShape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + ShapeString(a.shape()) + " vs " +
                     ShapeString(b.shape()));
  }
}

Var Self(const Node& node) {
  return Var(std::const_pointer_cast<Node>(node.shared_from_this()));
}

const Var& Parent(const Node& node, std::size_t i) { return node.parents[i]; }

template <typename F>
Tensor MapUnary(const Tensor& a, F f) {
  Tensor out(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = f(a.data[i]);
  return out;
}

// Row-major transpose of a [rows, cols] block into dst [cols, rows].
void TransposeInto(const double* src, int rows, int cols, double* dst) {
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::Detach() const { return Var(node_->value, false); }

Var MakeResult(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const Var& p : parents) needs = needs || p.requires_grad();
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

bool GradEnabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::vector<Var> Grad(const Var& output, const std::vector<Var>& inputs, bool create_graph) {
  if (output.size() != 1) {
    throw ShapeError("Grad: output must be a scalar, got " + ShapeString(output.shape()));
  }
  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();

  // Post-order over nodes that require grad.
  std::vector<Node*> order;
  if (output.requires_grad()) {
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(output.node().get(), 0);
    visited.insert(output.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* parent = node->parents[next++].node().get();
        if (parent->requires_grad && visited.insert(parent).second) {
          stack.emplace_back(parent, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::unordered_set<const Node*> wanted;
  for (const Var& in : inputs) wanted.insert(in.node().get());

  std::unordered_map<const Node*, Var> grads;
  if (output.requires_grad()) {
    grads[output.node().get()] = Constant(Tensor(output.shape(), 1.0));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (!node->backward) continue;
    Var g = found->second;
    if (!wanted.count(node)) grads.erase(found);
    std::vector<Var> parent_grads = node->backward(*node, g);
    for (std::size_t i = 0; i < node->parents.size() && i < parent_grads.size(); ++i) {
      const Var& parent = node->parents[i];
      if (!parent.requires_grad() || !parent_grads[i].defined()) continue;
      auto slot = grads.find(parent.node().get());
      if (slot == grads.end()) {
        grads.emplace(parent.node().get(), parent_grads[i]);
      } else {
        slot->second = Add(slot->second, parent_grads[i]);
      }
    }
  }

  std::vector<Var> result;
  result.reserve(inputs.size());
  for (const Var& in : inputs) {
    auto found = grads.find(in.node().get());
    if (found != grads.end()) {
      result.push_back(found->second);
    } else {
      result.push_back(Constant(Tensor(in.shape(), 0.0)));
    }
  }
  return result;
}

Var Constant(Tensor t) { return Var(std::move(t), false); }
Var Parameter(Tensor t) { return Var(std::move(t), true); }

// ---------------------------------------------------------------------------
// Elementwise

Var Add(const Var& a, const Var& b) {
  RequireSameShape(a, b, "Add");
  Tensor out(a.shape());
  K().add(out.size(), a.value().ptr(), b.value().ptr(), out.ptr());
  return MakeResult(std::move(out), {a, b},
                    [](const Node&, const Var& g) { return std::vector<Var>{g, g}; }, "add");
}

Var Sub(const Var& a, const Var& b) {
  RequireSameShape(a, b, "Sub");
  Tensor out(a.shape());
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av[i] - bv[i];
  return MakeResult(std::move(out), {a, b},
                    [](const Node&, const Var& g) { return std::vector<Var>{g, Neg(g)}; }, "sub");
}

Var Mul(const Var& a, const Var& b) {
  RequireSameShape(a, b, "Mul");
  Tensor out(a.shape());
  K().mul(out.size(), a.value().ptr(), b.value().ptr(), out.ptr());
  return MakeResult(std::move(out), {a, b},
                    [](const Node& self, const Var& g) {
                      const Var& x = Parent(self, 0);
                      const Var& y = Parent(self, 1);
                      return std::vector<Var>{x.requires_grad() ? Mul(g, y) : Var(),
                                              y.requires_grad() ? Mul(g, x) : Var()};
                    },
                    "mul");
}

Var Neg(const Var& a) { return Scale(a, -1.0); }

Var Scale(const Var& a, double s) {
  Tensor out(a.shape());
  K().scale(out.size(), s, a.value().ptr(), out.ptr());
  return MakeResult(std::move(out), {a},
                    [s](const Node&, const Var& g) { return std::vector<Var>{Scale(g, s)}; }, "scale");
}

Var AddScalar(const Var& a, double s) {
  Tensor out = MapUnary(a.value(), [s](double v) { return v + s; });
  return MakeResult(std::move(out), {a},
                    [](const Node&, const Var& g) { return std::vector<Var>{g}; }, "add_scalar");
}

Var Relu(const Var& a) {
  Tensor out = MapUnary(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return MakeResult(std::move(out), {a},
                    [](const Node& self, const Var& g) {
                      Tensor mask = MapUnary(Parent(self, 0).value(),
                                             [](double v) { return v > 0.0 ? 1.0 : 0.0; });
                      return std::vector<Var>{Mul(g, Constant(std::move(mask)))};
                    },
                    "relu");
}

Var Sigmoid(const Var& a) {
  Tensor out = MapUnary(a.value(), [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return MakeResult(std::move(out), {a},
                    [](const Node& self, const Var& g) {
                      Var y = Self(self);
                      return std::vector<Var>{Mul(g, Mul(y, AddScalar(Neg(y), 1.0)))};
                    },
                    "sigmoid");
}

Var Log(const Var& a) {
  Tensor out = MapUnary(a.value(), [](double v) { return std::log(v); });
  return MakeResult(std::move(out), {a},
                    [](const Node& self, const Var& g) {
                      return std::vector<Var>{Mul(g, Reciprocal(Parent(self, 0)))};
                    },
                    "log");
}

Var Exp(const Var& a) {
  Tensor out = MapUnary(a.value(), [](double v) { return std::exp(v); });
  return MakeResult(std::move(out), {a},
                    [](const Node& self, const Var& g) { return std::vector<Var>{Mul(g, Self(self))}; },
                    "exp");
}

Var Pow(const Var& a, double p) {
  Tensor out = MapUnary(a.value(), [p](double v) { return std::pow(v, p); });
  return MakeResult(std::move(out), {a},
                    [p](const Node& self, const Var& g) {
                      if (p == 0.0) return std::vector<Var>{Var()};
                      return std::vector<Var>{Mul(g, Scale(Pow(Parent(self, 0), p - 1.0), p))};
                    },
                    "pow");
}

Var Reciprocal(const Var& a) {
  Tensor out = MapUnary(a.value(), [](double v) { return 1.0 / v; });
  return MakeResult(std::move(out), {a},
                    [](const Node& self, const Var& g) {
                      Var y = Self(self);
                      return std::vector<Var>{Neg(Mul(g, Mul(y, y)))};
                    },
                    "reciprocal");
}

Var Clamp(const Var& a, double lo, double hi) {
  Tensor out = MapUnary(a.value(), [lo, hi](double v) { return std::min(std::max(v, lo), hi); });
  return MakeResult(std::move(out), {a},
                    [lo, hi](const Node& self, const Var& g) {
                      Tensor mask = MapUnary(Parent(self, 0).value(), [lo, hi](double v) {
                        return (v >= lo && v <= hi) ? 1.0 : 0.0;
                      });
                      return std::vector<Var>{Mul(g, Constant(std::move(mask)))};
                    },
                    "clamp");
}

// ---------------------------------------------------------------------------
// Layout

Var Reshape(const Var& a, Shape shape) {
  if (NumElements(shape) != a.size()) {
    throw ShapeError("Reshape: cannot view " + ShapeString(a.shape()) + " as " + ShapeString(shape));
  }
  Tensor out(std::move(shape), a.value().data);
  return MakeResult(std::move(out), {a},
                    [](const Node& self, const Var& g) {
                      return std::vector<Var>{Reshape(g, Parent(self, 0).shape())};
                    },
                    "reshape");
}

Var Permute(const Var& a, const std::vector<int>& perm) {
  const int rank = static_cast<int>(a.shape().size());
  if (static_cast<int>(perm.size()) != rank) {
    throw ShapeError("Permute: permutation rank mismatch for " + ShapeString(a.shape()));
  }
  std::vector<int> check(perm);
  std::sort(check.begin(), check.end());
  for (int i = 0; i < rank; ++i) {
    if (check[i] != i) throw ShapeError("Permute: invalid permutation");
  }
  const Shape& in_shape = a.shape();
  Shape out_shape(rank);
  for (int i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];
  std::vector<std::size_t> in_strides(rank, 1);
  for (int i = rank - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  std::vector<std::size_t> src_stride(rank);
  for (int i = 0; i < rank; ++i) src_stride[i] = in_strides[perm[i]];

  Tensor out(out_shape);
  const double* src = a.value().ptr();
  std::vector<int> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t o = 0; o < out.size(); ++o) {
    out.data[o] = src[offset];
    for (int d = rank - 1; d >= 0; --d) {
      if (++idx[d] < out_shape[d]) {
        offset += src_stride[d];
        break;
      }
      offset -= src_stride[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
  std::vector<int> inverse(rank);
  for (int i = 0; i < rank; ++i) inverse[perm[i]] = i;
  return MakeResult(std::move(out), {a},
                    [inverse](const Node&, const Var& g) {
                      return std::vector<Var>{Permute(g, inverse)};
                    },
                    "permute");
}

Var BroadcastMid(const Var& a, int m) {
  if (a.shape().size() != 2) throw ShapeError("BroadcastMid expects [B,F], got " + ShapeString(a.shape()));
  const int b = a.shape()[0];
  const int f = a.shape()[1];
  Tensor out(Shape{b, m, f});
  const double* src = a.value().ptr();
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < m; ++j)
      std::copy_n(src + static_cast<std::size_t>(i) * f, f,
                  out.ptr() + (static_cast<std::size_t>(i) * m + j) * f);
  return MakeResult(std::move(out), {a},
                    [](const Node&, const Var& g) { return std::vector<Var>{SumMid(g)}; },
                    "broadcast_mid");
}

Var SumMid(const Var& a) {
  if (a.shape().size() != 3) throw ShapeError("SumMid expects [B,M,F], got " + ShapeString(a.shape()));
  const int b = a.shape()[0];
  const int m = a.shape()[1];
  const int f = a.shape()[2];
  Tensor out(Shape{b, f}, 0.0);
  const double* src = a.value().ptr();
  for (int i = 0; i < b; ++i) {
    double* dst = out.ptr() + static_cast<std::size_t>(i) * f;
    for (int j = 0; j < m; ++j) {
      const double* row = src + (static_cast<std::size_t>(i) * m + j) * f;
      if (f == 1) {
        dst[0] += row[0];
      } else {
        K().add(f, dst, row, dst);
      }
    }
  }
  return MakeResult(std::move(out), {a},
                    [m](const Node&, const Var& g) { return std::vector<Var>{BroadcastMid(g, m)}; },
                    "sum_mid");
}

// ---------------------------------------------------------------------------
// Matrix products

Var BatchMatMul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[0] != b.shape()[0]) {
    throw ShapeError("BatchMatMul: incompatible operands " + ShapeString(a.shape()) + " x " +
                     ShapeString(b.shape()));
  }
  const int batch = a.shape()[0];
  const int m = trans_a ? a.shape()[2] : a.shape()[1];
  const int ka = trans_a ? a.shape()[1] : a.shape()[2];
  const int kb = trans_b ? b.shape()[2] : b.shape()[1];
  const int n = trans_b ? b.shape()[1] : b.shape()[2];
  if (ka != kb) {
    throw ShapeError("BatchMatMul: inner dimensions differ " + ShapeString(a.shape()) + " x " +
                     ShapeString(b.shape()));
  }
  const int k = ka;
  Tensor out(Shape{batch, m, n});
  std::vector<double> scratch_a(trans_a ? static_cast<std::size_t>(m) * k : 0);
  std::vector<double> scratch_b(trans_b ? static_cast<std::size_t>(k) * n : 0);
  const std::size_t a_step = static_cast<std::size_t>(m) * k;
  const std::size_t b_step = static_cast<std::size_t>(k) * n;
  for (int i = 0; i < batch; ++i) {
    const double* ap = a.value().ptr() + i * a_step;
    const double* bp = b.value().ptr() + i * b_step;
    if (trans_a) {
      TransposeInto(ap, k, m, scratch_a.data());
      ap = scratch_a.data();
    }
    if (trans_b) {
      TransposeInto(bp, n, k, scratch_b.data());
      bp = scratch_b.data();
    }
    K().gemm(m, n, k, ap, k, bp, n, out.ptr() + static_cast<std::size_t>(i) * m * n, n, false);
  }
  return MakeResult(std::move(out), {a, b},
                    [trans_a, trans_b](const Node& self, const Var& g) {
                      const Var& x = Parent(self, 0);
                      const Var& y = Parent(self, 1);
                      Var gx, gy;
                      if (x.requires_grad()) {
                        gx = trans_a ? BatchMatMul(y, g, trans_b, true) : BatchMatMul(g, y, false, !trans_b);
                      }
                      if (y.requires_grad()) {
                        gy = trans_b ? BatchMatMul(g, x, true, trans_a) : BatchMatMul(x, g, !trans_a, false);
                      }
                      return std::vector<Var>{gx, gy};
                    },
                    "bmm");
}

Var MatMul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  if (a.shape().size() != 2 || b.shape().size() != 2) {
    throw ShapeError("MatMul expects 2-D operands, got " + ShapeString(a.shape()) + " x " +
                     ShapeString(b.shape()));
  }
  Var out = BatchMatMul(Reshape(a, {1, a.shape()[0], a.shape()[1]}),
                        Reshape(b, {1, b.shape()[0], b.shape()[1]}), trans_a, trans_b);
  return Reshape(out, {out.shape()[1], out.shape()[2]});
}

// ---------------------------------------------------------------------------
// Composites

Var SumAll(const Var& a) {
  const int n = static_cast<int>(a.size());
  return Reshape(SumMid(Reshape(a, {1, n, 1})), Shape{});
}

Var MeanAll(const Var& a) { return Scale(SumAll(a), 1.0 / static_cast<double>(a.size())); }

namespace {
int LastDim(const Var& x, const char* op) {
  if (x.shape().empty()) throw ShapeError(std::string(op) + ": scalar input");
  return x.shape().back();
}
}  // namespace

Var AddBias(const Var& x, const Var& bias) {
  const int f = LastDim(x, "AddBias");
  if (bias.shape() != Shape{f}) {
    throw ShapeError("AddBias: bias " + ShapeString(bias.shape()) + " for input " + ShapeString(x.shape()));
  }
  const int rows = static_cast<int>(x.size() / f);
  return Add(x, Reshape(BroadcastMid(Reshape(bias, {1, f}), rows), x.shape()));
}

Var MulLast(const Var& x, const Var& gain) {
  const int f = LastDim(x, "MulLast");
  if (gain.shape() != Shape{f}) {
    throw ShapeError("MulLast: gain " + ShapeString(gain.shape()) + " for input " + ShapeString(x.shape()));
  }
  const int rows = static_cast<int>(x.size() / f);
  return Mul(x, Reshape(BroadcastMid(Reshape(gain, {1, f}), rows), x.shape()));
}

Var SumLastKeep(const Var& x) {
  const int f = LastDim(x, "SumLastKeep");
  const int rows = static_cast<int>(x.size() / f);
  Shape out_shape = x.shape();
  out_shape.back() = 1;
  return Reshape(SumMid(Reshape(x, {rows, f, 1})), out_shape);
}

Var ExpandLast(const Var& x, int f) {
  if (x.shape().empty() || x.shape().back() != 1) {
    throw ShapeError("ExpandLast expects trailing 1, got " + ShapeString(x.shape()));
  }
  const int rows = static_cast<int>(x.size());
  Shape out_shape = x.shape();
  out_shape.back() = f;
  return Reshape(BroadcastMid(Reshape(x, {rows, 1}), f), out_shape);
}

Var MeanLastKeep(const Var& x) {
  return Scale(SumLastKeep(x), 1.0 / static_cast<double>(LastDim(x, "MeanLastKeep")));
}

Var SoftmaxLast(const Var& x) {
  const int f = LastDim(x, "SoftmaxLast");
  const std::size_t rows = x.size() / f;
  Tensor out(x.shape());
  const double* src = x.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = src + r * f;
    double* dst = out.ptr() + r * f;
    const double mx = *std::max_element(in, in + f);
    double total = 0.0;
    for (int j = 0; j < f; ++j) {
      dst[j] = std::exp(in[j] - mx);
      total += dst[j];
    }
    for (int j = 0; j < f; ++j) dst[j] /= total;
  }
  return MakeResult(std::move(out), {x},
                    [f](const Node& self, const Var& g) {
                      Var y = Self(self);
                      Var inner = ExpandLast(SumLastKeep(Mul(g, y)), f);
                      return std::vector<Var>{Mul(y, Sub(g, inner))};
                    },
                    "softmax");
}

Var Dropout(const Var& x, double rate, std::mt19937_64& rng, bool training) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) return Mul(x, Constant(Tensor(x.shape(), 0.0)));
  Tensor mask(x.shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask.data) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u >= rate ? keep_scale : 0.0;
  }
  return Mul(x, Constant(std::move(mask)));
}

// ---------------------------------------------------------------------------
// Convolution

ConvGeometry MakeConvGeometry(const Shape& input, const Shape& weight, int stride, int pad) {
  if (input.size() != 4 || weight.size() != 4) {
    throw ShapeError("Conv2d expects NHWC input and [KH,KW,Cin,Cout] weights, got " + ShapeString(input) +
                     " and " + ShapeString(weight));
  }
  if (input[3] != weight[2]) {
    throw ShapeError("Conv2d: input channels " + std::to_string(input[3]) + " vs weight " +
                     ShapeString(weight));
  }
  if (stride < 1 || pad < 0) throw ShapeError("Conv2d: bad stride/padding");
  ConvGeometry g;
  g.n = input[0];
  g.h = input[1];
  g.w = input[2];
  g.cin = input[3];
  g.kh = weight[0];
  g.kw = weight[1];
  g.cout = weight[3];
  g.stride = stride;
  g.pad = pad;
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("Conv2d: kernel larger than padded input");
  return g;
}

namespace {

std::size_t ColRows(const ConvGeometry& g) { return static_cast<std::size_t>(g.n) * g.ho * g.wo; }
std::size_t ColWidth(const ConvGeometry& g) { return static_cast<std::size_t>(g.kh) * g.kw * g.cin; }

bool IsPointwise(const ConvGeometry& g) { return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0; }

std::vector<double> Im2Col(const double* x, const ConvGeometry& g) {
  const std::size_t width = ColWidth(g);
  std::vector<double> cols(ColRows(g) * width, 0.0);
  std::size_t row = 0;
  for (int n = 0; n < g.n; ++n) {
    for (int oh = 0; oh < g.ho; ++oh) {
      for (int ow = 0; ow < g.wo; ++ow, ++row) {
        double* dst = cols.data() + row * width;
        for (int i = 0; i < g.kh; ++i) {
          const int ih = oh * g.stride - g.pad + i;
          if (ih < 0 || ih >= g.h) continue;
          for (int j = 0; j < g.kw; ++j) {
            const int iw = ow * g.stride - g.pad + j;
            if (iw < 0 || iw >= g.w) continue;
            const double* src = x + ((static_cast<std::size_t>(n) * g.h + ih) * g.w + iw) * g.cin;
            std::copy_n(src, g.cin, dst + (static_cast<std::size_t>(i) * g.kw + j) * g.cin);
          }
        }
      }
    }
  }
  return cols;
}

void Col2ImAdd(const double* cols, const ConvGeometry& g, double* x) {
  const std::size_t width = ColWidth(g);
  std::size_t row = 0;
  for (int n = 0; n < g.n; ++n) {
    for (int oh = 0; oh < g.ho; ++oh) {
      for (int ow = 0; ow < g.wo; ++ow, ++row) {
        const double* src = cols + row * width;
        for (int i = 0; i < g.kh; ++i) {
          const int ih = oh * g.stride - g.pad + i;
          if (ih < 0 || ih >= g.h) continue;
          for (int j = 0; j < g.kw; ++j) {
            const int iw = ow * g.stride - g.pad + j;
            if (iw < 0 || iw >= g.w) continue;
            double* dst = x + ((static_cast<std::size_t>(n) * g.h + ih) * g.w + iw) * g.cin;
            K().add(g.cin, dst, src + (static_cast<std::size_t>(i) * g.kw + j) * g.cin, dst);
          }
        }
      }
    }
  }
}

void RequireShape(const Var& v, const Shape& want, const char* op) {
  if (v.shape() != want) {
    throw ShapeError(std::string(op) + ": expected " + ShapeString(want) + ", got " + ShapeString(v.shape()));
  }
}

}  // namespace

Var Conv2d(const Var& x, const Var& w, int stride, int pad) {
  const ConvGeometry g = MakeConvGeometry(x.shape(), w.shape(), stride, pad);
  Tensor out(Shape{g.n, g.ho, g.wo, g.cout});
  const std::size_t rows = ColRows(g);
  const std::size_t width = ColWidth(g);
  if (IsPointwise(g)) {
    K().gemm(rows, g.cout, width, x.value().ptr(), width, w.value().ptr(), g.cout, out.ptr(), g.cout, false);
  } else {
    std::vector<double> cols = Im2Col(x.value().ptr(), g);
    K().gemm(rows, g.cout, width, cols.data(), width, w.value().ptr(), g.cout, out.ptr(), g.cout, false);
  }
  return MakeResult(std::move(out), {x, w},
                    [g](const Node& self, const Var& grad) {
                      const Var& in = Parent(self, 0);
                      const Var& weight = Parent(self, 1);
                      return std::vector<Var>{
                          in.requires_grad() ? Conv2dInputGrad(grad, weight, g) : Var(),
                          weight.requires_grad() ? Conv2dWeightGrad(in, grad, g) : Var()};
                    },
                    "conv2d");
}

Var Conv2dInputGrad(const Var& grad_out, const Var& w, const ConvGeometry& g) {
  RequireShape(grad_out, {g.n, g.ho, g.wo, g.cout}, "Conv2dInputGrad");
  RequireShape(w, {g.kh, g.kw, g.cin, g.cout}, "Conv2dInputGrad");
  const std::size_t rows = ColRows(g);
  const std::size_t width = ColWidth(g);
  std::vector<double> wt(width * g.cout);
  TransposeInto(w.value().ptr(), static_cast<int>(width), g.cout, wt.data());
  Tensor out(Shape{g.n, g.h, g.w, g.cin}, 0.0);
  if (IsPointwise(g)) {
    K().gemm(rows, width, g.cout, grad_out.value().ptr(), g.cout, wt.data(), width, out.ptr(), width, false);
  } else {
    std::vector<double> dcols(rows * width);
    K().gemm(rows, width, g.cout, grad_out.value().ptr(), g.cout, wt.data(), width, dcols.data(), width, false);
    Col2ImAdd(dcols.data(), g, out.ptr());
  }
  return MakeResult(std::move(out), {grad_out, w},
                    [g](const Node& self, const Var& h) {
                      const Var& go = Parent(self, 0);
                      const Var& weight = Parent(self, 1);
                      return std::vector<Var>{
                          go.requires_grad() ? Conv2d(h, weight, g.stride, g.pad) : Var(),
                          weight.requires_grad() ? Conv2dWeightGrad(h, go, g) : Var()};
                    },
                    "conv2d_input_grad");
}

Var Conv2dWeightGrad(const Var& x, const Var& grad_out, const ConvGeometry& g) {
  RequireShape(x, {g.n, g.h, g.w, g.cin}, "Conv2dWeightGrad");
  RequireShape(grad_out, {g.n, g.ho, g.wo, g.cout}, "Conv2dWeightGrad");
  const std::size_t rows = ColRows(g);
  const std::size_t width = ColWidth(g);
  std::vector<double> cols_t(width * rows);
  if (IsPointwise(g)) {
    TransposeInto(x.value().ptr(), static_cast<int>(rows), static_cast<int>(width), cols_t.data());
  } else {
    std::vector<double> cols = Im2Col(x.value().ptr(), g);
    TransposeInto(cols.data(), static_cast<int>(rows), static_cast<int>(width), cols_t.data());
  }
  Tensor out(Shape{g.kh, g.kw, g.cin, g.cout});
  K().gemm(width, g.cout, rows, cols_t.data(), rows, grad_out.value().ptr(), g.cout, out.ptr(), g.cout, false);
  return MakeResult(std::move(out), {x, grad_out},
                    [g](const Node& self, const Var& h) {
                      const Var& in = Parent(self, 0);
                      const Var& go = Parent(self, 1);
                      return std::vector<Var>{
                          in.requires_grad() ? Conv2dInputGrad(go, h, g) : Var(),
                          go.requires_grad() ? Conv2d(in, h, g.stride, g.pad) : Var()};
                    },
                    "conv2d_weight_grad");
}

// ---------------------------------------------------------------------------
// Window crops

namespace {
void CheckPlan(const CropPlan& p) {
  if (p.size > p.h || p.size > p.w) throw ShapeError("crop window larger than feature map");
  if (p.origins.size() != static_cast<std::size_t>(2) * p.n * p.windows) {
    throw ShapeError("crop plan origin count mismatch");
  }
  for (std::size_t i = 0; i < p.origins.size(); i += 2) {
    if (p.origins[i] < 0 || p.origins[i] + p.size > p.h || p.origins[i + 1] < 0 ||
        p.origins[i + 1] + p.size > p.w) {
      throw ShapeError("crop window outside feature map");
    }
  }
}
}  // namespace

Var CropWindows(const Var& feature_map, std::shared_ptr<const CropPlan> plan) {
  const CropPlan& p = *plan;
  RequireShape(feature_map, {p.n, p.h, p.w, p.d}, "CropWindows");
  CheckPlan(p);
  const std::size_t span = static_cast<std::size_t>(p.size) * p.d;
  const std::size_t window_len = span * p.size;
  Tensor out(Shape{p.windows, p.n, static_cast<int>(window_len)});
  const double* src = feature_map.value().ptr();
  for (int n = 0; n < p.n; ++n) {
    for (int b = 0; b < p.windows; ++b) {
      const std::size_t o = 2 * (static_cast<std::size_t>(n) * p.windows + b);
      const int r0 = p.origins[o];
      const int c0 = p.origins[o + 1];
      double* dst = out.ptr() + (static_cast<std::size_t>(b) * p.n + n) * window_len;
      for (int r = 0; r < p.size; ++r) {
        const double* row = src + ((static_cast<std::size_t>(n) * p.h + r0 + r) * p.w + c0) * p.d;
        std::copy_n(row, span, dst + r * span);
      }
    }
  }
  return MakeResult(std::move(out), {feature_map},
                    [plan](const Node&, const Var& g) { return std::vector<Var>{ScatterWindows(g, plan)}; },
                    "crop");
}

Var ScatterWindows(const Var& windows, std::shared_ptr<const CropPlan> plan) {
  const CropPlan& p = *plan;
  const std::size_t span = static_cast<std::size_t>(p.size) * p.d;
  const std::size_t window_len = span * p.size;
  RequireShape(windows, {p.windows, p.n, static_cast<int>(window_len)}, "ScatterWindows");
  CheckPlan(p);
  Tensor out(Shape{p.n, p.h, p.w, p.d}, 0.0);
  const double* src = windows.value().ptr();
  for (int n = 0; n < p.n; ++n) {
    for (int b = 0; b < p.windows; ++b) {
      const std::size_t o = 2 * (static_cast<std::size_t>(n) * p.windows + b);
      const int r0 = p.origins[o];
      const int c0 = p.origins[o + 1];
      const double* win = src + (static_cast<std::size_t>(b) * p.n + n) * window_len;
      for (int r = 0; r < p.size; ++r) {
        double* row = out.ptr() + ((static_cast<std::size_t>(n) * p.h + r0 + r) * p.w + c0) * p.d;
        K().add(span, row, win + r * span, row);
      }
    }
  }
  return MakeResult(std::move(out), {windows},
                    [plan](const Node&, const Var& g) { return std::vector<Var>{CropWindows(g, plan)}; },
                    "scatter");
}

}  // namespace marl::ag
