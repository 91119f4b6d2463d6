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
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "marl/autograd.hpp"
#include "marl/checkpoint.hpp"

namespace marl {

// Ordered, uniquely named collection of tensors. Holds the meta-learner
// initialization and every adapted copy of it; two sets with the same
// layout support elementwise updates.
class ParameterSet {
 public:
  void Add(std::string name, ag::Var value);

  bool Contains(std::string_view name) const;
  const ag::Var& Get(std::string_view name) const;
  const ag::Var& operator[](std::string_view name) const { return Get(name); }

  std::size_t size() const { return vars_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<ag::Var>& vars() const { return vars_; }
  std::size_t NumScalars() const;

  bool SameLayout(const ParameterSet& other) const;

  // Fresh leaves that require grad, values copied.
  ParameterSet CloneLeaves() const;
  // Fresh constants, values copied.
  ParameterSet Detached() const;
  ParameterSet Filter(const std::function<bool(const std::string&)>& keep) const;

  // this + alpha * deltas, recorded on the graph when grad mode is on.
  ParameterSet AddScaled(const std::vector<ag::Var>& deltas, double alpha) const;

  std::vector<NamedTensor> ToTensors() const;
  static ParameterSet FromTensors(const std::vector<NamedTensor>& tensors, bool requires_grad);

  bool AllFinite() const;

 private:
  std::vector<std::string> names_;
  std::vector<ag::Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace marl
