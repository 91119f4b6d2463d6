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
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace marl {

// All randomness flows from one root seed split into named streams
// ("sampling", "init", "dropout", ...). The helpers below avoid the
// implementation-defined std distributions so draws are identical across
// standard libraries.
using Rng = std::mt19937_64;

std::uint64_t SplitMix64(std::uint64_t x);
std::uint64_t DeriveSeed(std::uint64_t root, std::string_view stream);
std::uint64_t DeriveSeed(std::uint64_t root, std::string_view stream, std::uint64_t index);
Rng MakeStream(std::uint64_t root, std::string_view stream);
Rng MakeStream(std::uint64_t root, std::string_view stream, std::uint64_t index);

// [0, 1)
double Uniform01(Rng& rng);
double StandardNormal(Rng& rng);
// Uniform integer in [0, n).
std::size_t UniformIndex(Rng& rng, std::size_t n);
bool Bernoulli(Rng& rng, double p);

template <typename T>
void Shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[UniformIndex(rng, i)]);
  }
}

}  // namespace marl
