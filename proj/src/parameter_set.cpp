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

#include "marl/parameter_set.hpp"

#include "marl/errors.hpp"

namespace marl {

void ParameterSet::Add(std::string name, ag::Var value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name `" + name + "`");
  index_.emplace(name, vars_.size());
  names_.push_back(std::move(name));
  vars_.push_back(std::move(value));
}

bool ParameterSet::Contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

const ag::Var& ParameterSet::Get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("no parameter named `" + std::string(name) + "`");
  return vars_[it->second];
}

std::size_t ParameterSet::NumScalars() const {
  std::size_t n = 0;
  for (const auto& v : vars_) n += v.size();
  return n;
}

bool ParameterSet::SameLayout(const ParameterSet& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i].shape() != other.vars_[i].shape()) return false;
  }
  return true;
}

ParameterSet ParameterSet::CloneLeaves() const {
  ParameterSet out;
  for (std::size_t i = 0; i < vars_.size(); ++i) out.Add(names_[i], ag::Parameter(vars_[i].value()));
  return out;
}

ParameterSet ParameterSet::Detached() const {
  ParameterSet out;
  for (std::size_t i = 0; i < vars_.size(); ++i) out.Add(names_[i], ag::Constant(vars_[i].value()));
  return out;
}

ParameterSet ParameterSet::Filter(const std::function<bool(const std::string&)>& keep) const {
  ParameterSet out;
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (keep(names_[i])) out.Add(names_[i], vars_[i]);
  }
  return out;
}

ParameterSet ParameterSet::AddScaled(const std::vector<ag::Var>& deltas, double alpha) const {
  if (deltas.size() != vars_.size()) throw ShapeError("AddScaled: delta count does not match parameter count");
  ParameterSet out;
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    out.Add(names_[i], ag::Add(vars_[i], ag::Scale(deltas[i], alpha)));
  }
  return out;
}

std::vector<NamedTensor> ParameterSet::ToTensors() const {
  std::vector<NamedTensor> out;
  out.reserve(vars_.size());
  for (std::size_t i = 0; i < vars_.size(); ++i) out.push_back({names_[i], vars_[i].value()});
  return out;
}

ParameterSet ParameterSet::FromTensors(const std::vector<NamedTensor>& tensors, bool requires_grad) {
  ParameterSet out;
  for (const auto& t : tensors) out.Add(t.name, ag::Var(t.tensor, requires_grad));
  return out;
}

bool ParameterSet::AllFinite() const {
  for (const auto& v : vars_) {
    if (!v.value().AllFinite()) return false;
  }
  return true;
}

}  // namespace marl
