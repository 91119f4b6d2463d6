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

#include "marl/pipeline.hpp"

#include <fstream>

#include "marl/checkpoint.hpp"
#include "marl/errors.hpp"
#include "marl/log.hpp"
#include "marl/simd/kernels.hpp"
#include "marl/synthetic_corpus.hpp"

namespace marl::app {
namespace fs = std::filesystem;

namespace {

fs::path OutDir(const RunConfig& config) { return fs::path(config.Get("out")); }

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

void Prepare(const RunConfig& config) {
  config.Validate();
  ApplySimd(config);
  SetLogLevel(config.Bool("verbose") ? LogLevel::kInfo : LogLevel::kWarn);
}

// Called once inputs have loaded, so a failed command leaves no directory.
void StartOutput(const RunConfig& config, const std::string& command) {
  fs::create_directories(OutDir(config));
  config.SaveSnapshot(OutDir(config) / (command + ".resolved.cfg"));
}

std::string FoldLine(const RunConfig& config, int fold) {
  return "fold " + std::to_string(fold) + " of " + config.Get("folds") + ", seed " + config.Get("seed");
}

std::string MarlProtocol(const RunConfig& config) {
  return "meta-test: " + config.Get("test-batches") + " batches of " + config.Get("tasks") + " tasks, " +
         config.Get("test-inner-steps") + " adaptation steps";
}

std::string StageName(const RunConfig& config) { return config.Bool("plain") ? "plain" : "marl"; }

std::string RelationName(const RunConfig& config) {
  return config.Bool("relational") ? "relation" : "independent";
}

}  // namespace

Dataset LoadDataset(const RunConfig& config) {
  const std::string manifest = config.Get("manifest");
  if (manifest.empty()) throw ConfigError("--manifest is required");
  Dataset d;
  const int labels = static_cast<int>(config.AuIds().size());
  d.index = data::SplitFolds(data::LoadManifest(manifest, labels), static_cast<int>(config.Int("folds")),
                             config.Seed());
  d.store = std::make_shared<data::FrameStore>(static_cast<int>(config.Int("input-side")));
  return d;
}

void ApplySimd(const RunConfig& config) {
  const std::string& name = config.Get("simd");
  if (name == "auto") return;
  if (!simd::SetBackend(name)) throw ConfigError("kernel backend `" + name + "` is not available on this machine");
}

net::RegionNetwork BuildRegionNetwork(const RunConfig& config) {
  return net::RegionNetwork(config.Region(), config.AuTable());
}

rel::RelationModel BuildRelationModel(const RunConfig& config) {
  return rel::RelationModel(BuildRegionNetwork(config), config.Encoder());
}

meta::TrainResult TrainMarl(const RunConfig& config, Dataset& dataset, int fold, const fs::path& out_dir) {
  const net::RegionNetwork model = BuildRegionNetwork(config);
  meta::TrainOptions options;
  options.out_dir = out_dir;
  options.seed = config.Seed();
  options.plain = config.Bool("plain");
  options.resume = config.Bool("resume");
  options.force = config.Bool("force");
  options.pretrained_backbone = config.Get("pretrained-backbone");
  meta::TrainResult result =
      meta::RunMetaTraining(config.Meta(), config.Loss(), model, *dataset.store, dataset.index, fold, options);
  WriteText(out_dir / "marl_report.txt",
            loss::FormatF1Table(result.best_report.f1, config.AuNames(),
                                {"stage 1 (" + StageName(config) + ")", FoldLine(config, fold), MarlProtocol(config)}));
  return result;
}

rel::TrainResult TrainRelation(const RunConfig& config, Dataset& dataset, int fold, const fs::path& marl_checkpoint,
                               const fs::path& out_dir) {
  const rel::RelationModel model = BuildRelationModel(config);
  meta::TrainOptions options;
  options.out_dir = out_dir;
  options.seed = config.Seed();
  options.resume = config.Bool("resume");
  options.force = config.Bool("force");
  rel::TrainResult result = rel::RunRelationTraining(config.RelationTrain(), config.Loss(), model, *dataset.store,
                                                     dataset.index, fold, marl_checkpoint, options);
  WriteText(out_dir / "relation_report.txt",
            loss::FormatF1Table(result.best_report.f1, config.AuNames(),
                                {"stage 2 (" + RelationName(config) + ")", FoldLine(config, fold)}));
  return result;
}

loss::F1Report AverageReports(const std::vector<loss::F1Report>& reports) {
  loss::F1Report avg;
  if (reports.empty()) return avg;
  const std::size_t c = reports[0].per_au.size();
  avg.per_au.assign(c, 0.0);
  avg.undefined.assign(c, false);
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < c; ++i) {
      avg.per_au[i] += r.per_au[i] / static_cast<double>(reports.size());
      if (r.undefined[i]) avg.undefined[i] = true;
    }
    avg.average += r.average / static_cast<double>(reports.size());
  }
  return avg;
}

int CmdSynthGen(const fs::path& corpus_config, const fs::path& out_dir, std::ostream& out) {
  synth::CorpusSpec spec;
  if (!corpus_config.empty()) spec = synth::CorpusSpec::FromConfig(KeyValueConfig::Load(corpus_config));
  const fs::path manifest = synth::GenerateCorpus(spec, out_dir);
  // A config fragment so training commands can be pointed at the corpus.
  KeyValueConfig run;
  run.Set("manifest", "manifest.txt");
  std::string ids;
  for (std::size_t i = 0; i < spec.au_ids.size(); ++i) ids += (i ? "," : "") + spec.au_ids[i];
  run.Set("au-ids", ids);
  run.Set("au-table", spec.au_table);
  run.Save(out_dir / "run.cfg");
  out << "wrote " << spec.n_subjects * spec.frames_per_subject << " frames; manifest " << manifest.string() << '\n';
  return 0;
}

int CmdMarlTrain(const RunConfig& config, std::ostream& out) {
  Prepare(config);
  Dataset dataset = LoadDataset(config);
  StartOutput(config, "marl-train");
  const int fold = static_cast<int>(config.Int("fold-id"));
  const meta::TrainResult result = TrainMarl(config, dataset, fold, OutDir(config));
  std::ifstream report(OutDir(config) / "marl_report.txt");
  out << report.rdbuf();
  out << "best checkpoint: " << result.best_checkpoint.string() << '\n';
  return 0;
}

int CmdRelationTrain(const RunConfig& config, std::ostream& out) {
  if (config.Get("marl-ckpt").empty()) {
    throw ConfigError("relation-train needs a stage-1 checkpoint: pass --marl-ckpt <path>");
  }
  Prepare(config);
  Dataset dataset = LoadDataset(config);
  StartOutput(config, "relation-train");
  const int fold = static_cast<int>(config.Int("fold-id"));
  const rel::TrainResult result = TrainRelation(config, dataset, fold, config.Get("marl-ckpt"), OutDir(config));
  std::ifstream report(OutDir(config) / "relation_report.txt");
  out << report.rdbuf();
  out << "best checkpoint: " << result.best_checkpoint.string() << '\n';
  return 0;
}

int CmdEvaluate(const RunConfig& config, std::ostream& out) {
  const fs::path ckpt_path = config.Get("ckpt");
  if (ckpt_path.empty()) throw ConfigError("evaluate needs a checkpoint: pass --ckpt <path>");
  Prepare(config);
  Dataset dataset = LoadDataset(config);
  StartOutput(config, "evaluate");
  const int fold = static_cast<int>(config.Int("fold-id"));
  const Checkpoint ckpt = LoadCheckpoint(ckpt_path);
  const auto kind = ckpt.meta.find("kind");
  std::string text;
  if (kind != ckpt.meta.end() && kind->second == "marl") {
    const net::RegionNetwork model = BuildRegionNetwork(config);
    const ParameterSet theta = meta::LoadMarlParameters(ckpt_path, model, config.Bool("force"));
    const auto weights = meta::TrainingWeights(dataset.index, fold, config.AuNames());
    const meta::MetaTestReport report =
        meta::MetaTest(model, theta, *dataset.store, dataset.index, fold, config.Meta(), weights, config.Seed());
    text = loss::FormatF1Table(report.f1, config.AuNames(),
                               {"evaluate stage 1 " + ckpt_path.filename().string(), FoldLine(config, fold),
                                MarlProtocol(config)});
  } else if (kind != ckpt.meta.end() && kind->second == "relation") {
    const rel::RelationModel model = BuildRelationModel(config);
    const ParameterSet params = rel::LoadRelationParameters(ckpt_path, model, config.Bool("force"));
    const rel::EvalReport report = rel::Evaluate(model, params, *dataset.store, dataset.index.Frames(true, fold),
                                                 static_cast<int>(config.Int("rel-test-batch")));
    text = loss::FormatF1Table(report.f1, config.AuNames(),
                               {"evaluate stage 2 " + ckpt_path.filename().string(), FoldLine(config, fold)});
  } else {
    throw LoadError(ckpt_path.string() + ": not a stage-1 or stage-2 checkpoint");
  }
  WriteText(OutDir(config) / "eval_report.txt", text);
  out << text;
  return 0;
}

int CmdCrossval(const RunConfig& config, std::ostream& out) {
  Prepare(config);
  Dataset dataset = LoadDataset(config);
  StartOutput(config, "crossval");
  const int folds = static_cast<int>(config.Int("folds"));
  std::vector<loss::F1Report> stage1;
  std::vector<loss::F1Report> stage2;
  for (int fold = 0; fold < folds; ++fold) {
    const fs::path dir = OutDir(config) / ("fold_" + std::to_string(fold));
    LogInfo("cross-validation fold " + std::to_string(fold));
    const meta::TrainResult marl = TrainMarl(config, dataset, fold, dir);
    const rel::TrainResult relation = TrainRelation(config, dataset, fold, marl.best_checkpoint, dir);
    stage1.push_back(marl.best_report.f1);
    stage2.push_back(relation.best_report.f1);
  }
  const std::string folds_line = "mean over " + std::to_string(folds) + " subject-exclusive folds, seed " +
                                 config.Get("seed");
  const std::string text =
      loss::FormatF1Table(AverageReports(stage1), config.AuNames(),
                          {"cross-validation, stage 1 (" + StageName(config) + ")", folds_line, MarlProtocol(config)}) +
      "\n" +
      loss::FormatF1Table(AverageReports(stage2), config.AuNames(),
                          {"cross-validation, stage 2 (" + RelationName(config) + ")", folds_line});
  WriteText(OutDir(config) / "crossval_report.txt", text);
  out << text;
  return 0;
}

}  // namespace marl::app
