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
#include <string>
#include <vector>

#include "marl/kv_config.hpp"
#include "marl/landmark_geometry.hpp"
#include "marl/losses_metrics.hpp"
#include "marl/maml_engine.hpp"
#include "marl/region_network.hpp"
#include "marl/relation_module.hpp"

namespace marl::app {

enum class FieldType { kString, kPath, kInt, kDouble, kBool, kIntList, kStringList };

struct ConfigField {
  std::string key;
  std::string default_value;
  FieldType type;
  std::string help;
};

// Every run setting, its default and a one-line description. The CLI
// registers one --<key> option per entry.
const std::vector<ConfigField>& RunConfigSchema();

// Defaults, then an optional config file, then explicit overrides. The
// resolved key set is always complete, so a saved snapshot reproduces the
// run on its own.
class RunConfig {
 public:
  RunConfig();

  // Unknown keys and ill-typed values raise ConfigError.
  void MergeFile(const std::filesystem::path& path);
  void Merge(const KeyValueConfig& values, const std::string& origin);
  void Set(const std::string& key, const std::string& value);

  const std::string& Get(const std::string& key) const { return values_.Get(key); }
  std::string String(const std::string& key) const { return Get(key); }
  long long Int(const std::string& key) const;
  double Double(const std::string& key) const;
  bool Bool(const std::string& key) const;

  const KeyValueConfig& Resolved() const { return values_; }
  void SaveSnapshot(const std::filesystem::path& path) const;

  std::vector<std::string> AuIds() const;
  std::vector<std::string> AuNames() const;
  geometry::AUCenterTable AuTable() const;
  net::RegionConfig Region() const;
  meta::MetaConfig Meta() const;
  loss::LossConfig Loss() const;
  rel::EncoderConfig Encoder() const;
  rel::RelationTrainConfig RelationTrain() const;
  std::uint64_t Seed() const { return static_cast<std::uint64_t>(Int("seed")); }

  // Builds every typed view once so bad values fail before any work starts.
  void Validate() const;

 private:
  KeyValueConfig values_;
};

}  // namespace marl::app
