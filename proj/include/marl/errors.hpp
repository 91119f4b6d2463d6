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

#include <stdexcept>
#include <string>

namespace marl {

// Base for every error caused by user input (bad files, bad configuration,
// inconsistent data). The CLI maps these to exit status 1; anything else
// escaping is treated as an internal failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

// Raised when an inner-loop loss goes non-finite.
class AdaptationError : public Error {
 public:
  AdaptationError(const std::string& what, int batch_id)
      : Error(what), batch_id_(batch_id) {}
  int batch_id() const { return batch_id_; }

 private:
  int batch_id_;
};

class ImportError : public Error {
 public:
  using Error::Error;
};

}  // namespace marl
