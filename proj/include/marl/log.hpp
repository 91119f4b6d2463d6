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

#include <iostream>
#include <string_view>

namespace marl {

enum class LogLevel { kQuiet = 0, kWarn = 1, kInfo = 2 };

// Process-wide verbosity for the few diagnostics the library emits.
void SetLogLevel(LogLevel level);
LogLevel GetLogLevel();

void LogWarn(std::string_view message);
void LogInfo(std::string_view message);

}  // namespace marl
