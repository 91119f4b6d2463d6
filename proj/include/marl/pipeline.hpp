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
#include <memory>
#include <ostream>
#include <string>

#include "marl/image.hpp"
#include "marl/maml_engine.hpp"
#include "marl/meta_dataset.hpp"
#include "marl/relation_module.hpp"
#include "marl/run_config.hpp"

namespace marl::app {

struct Dataset {
  data::SubjectIndex index;  // with folds assigned
  std::shared_ptr<data::FrameStore> store;
};

// Manifest from the config, split into subject-exclusive folds with the run seed.
Dataset LoadDataset(const RunConfig& config);

// Selects the kernel backend named by `simd` (auto keeps the detected one).
void ApplySimd(const RunConfig& config);

net::RegionNetwork BuildRegionNetwork(const RunConfig& config);
rel::RelationModel BuildRelationModel(const RunConfig& config);

meta::TrainResult TrainMarl(const RunConfig& config, Dataset& dataset, int fold, const std::filesystem::path& out_dir);
rel::TrainResult TrainRelation(const RunConfig& config, Dataset& dataset, int fold,
                               const std::filesystem::path& marl_checkpoint, const std::filesystem::path& out_dir);

// Mean per-AU F1 over folds.
loss::F1Report AverageReports(const std::vector<loss::F1Report>& reports);

// Subcommands. Each writes <out>/<command>.resolved.cfg and its reports, and
// echoes the main report to `out`. User errors surface as marl::Error.
int CmdSynthGen(const std::filesystem::path& corpus_config, const std::filesystem::path& out_dir, std::ostream& out);
int CmdMarlTrain(const RunConfig& config, std::ostream& out);
int CmdRelationTrain(const RunConfig& config, std::ostream& out);
int CmdEvaluate(const RunConfig& config, std::ostream& out);
int CmdCrossval(const RunConfig& config, std::ostream& out);

}  // namespace marl::app
