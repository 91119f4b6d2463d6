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

#include "marl/log.hpp"

#include <atomic>

namespace marl {
namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::kWarn)};
}

void SetLogLevel(LogLevel level) { g_level = static_cast<int>(level); }
LogLevel GetLogLevel() { return static_cast<LogLevel>(g_level.load()); }

void LogWarn(std::string_view message) {
  if (g_level >= static_cast<int>(LogLevel::kWarn)) std::cerr << "warning: " << message << '\n';
}

void LogInfo(std::string_view message) {
  if (g_level >= static_cast<int>(LogLevel::kInfo)) std::cerr << message << '\n';
}

}  // namespace marl
