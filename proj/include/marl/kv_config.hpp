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
#include <vector>

namespace marl {

// Flat `key = value` text files with `#` comments. Used for corpus specs,
// run configurations and resolved-config snapshots.
class KeyValueConfig {
 public:
  static KeyValueConfig Parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig Load(const std::filesystem::path& path);

  void Set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool Has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& Get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string Serialize() const;
  void Save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
};

// Typed conversions that name the offending key on failure.
double ParseDouble(const std::string& key, const std::string& value);
long long ParseInt(const std::string& key, const std::string& value);
bool ParseBool(const std::string& key, const std::string& value);
std::vector<int> ParseIntList(const std::string& key, const std::string& value);
std::vector<double> ParseDoubleList(const std::string& key, const std::string& value);

// Shortest decimal text that parses back to exactly the same double.
std::string FormatDouble(double v);

}  // namespace marl
