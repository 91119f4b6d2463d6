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

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "marl/tensor.hpp"

namespace marl {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Named-tensor archive. A text header lists the config fingerprint,
// free-form metadata and every tensor's name/dtype/shape; a checksummed
// little-endian float64 payload follows.
struct Checkpoint {
  std::string fingerprint;
  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> tensors;

  const Tensor* Find(std::string_view name) const;
};

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// Throws LoadError on a missing, truncated or corrupted archive.
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

// Throws LoadError when the archive was written for a different
// configuration, unless `force` (then only a warning is logged).
void RequireFingerprint(const Checkpoint& checkpoint, const std::string& expected, bool force,
                        const std::filesystem::path& path);

// 16 hex digits (FNV-1a 64) of a canonical description string.
std::string Fingerprint(std::string_view canonical);

}  // namespace marl
