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

// Command-line entry point: synth-gen, marl-train, relation-train,
// evaluate and crossval. Exit status 0 on success, 1 on user error,
// 2 on internal failure.

#include <iostream>
#include <map>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "marl/errors.hpp"
#include "marl/pipeline.hpp"
#include "marl/run_config.hpp"

namespace {

using marl::app::RunConfig;

// Storage for one subcommand's --<key> options.
struct ConfigOptions {
  std::string config_file;
  std::map<std::string, std::string> strings;
  std::map<std::string, bool> flags;
  std::map<std::string, CLI::Option*> options;
};

void RegisterConfigOptions(CLI::App* cmd, ConfigOptions& opts) {
  cmd->add_option("--config", opts.config_file, "key = value file layered over the defaults")
      ->check(CLI::ExistingFile);
  for (const auto& field : marl::app::RunConfigSchema()) {
    const std::string name = "--" + field.key;
    const std::string help = field.help + (field.default_value.empty() ? "" : " [" + field.default_value + "]");
    if (field.type == marl::app::FieldType::kBool) {
      opts.options[field.key] = cmd->add_flag(name, opts.flags[field.key], help);
    } else {
      opts.options[field.key] = cmd->add_option(name, opts.strings[field.key], help);
    }
  }
}

RunConfig Resolve(const ConfigOptions& opts) {
  RunConfig config;
  if (!opts.config_file.empty()) config.MergeFile(opts.config_file);
  for (const auto& [key, option] : opts.options) {
    if (option->count() == 0) continue;
    auto flag = opts.flags.find(key);
    config.Set(key, flag != opts.flags.end() ? (flag->second ? "true" : "false") : opts.strings.at(key));
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned AU region representations with relation learning"};
  app.require_subcommand(1);

  std::string corpus_file;
  std::string corpus_out;
  CLI::App* synth = app.add_subcommand("synth-gen", "render a synthetic AU corpus and its manifest");
  synth->add_option("--corpus", corpus_file, "corpus key = value file (defaults if omitted)")
      ->check(CLI::ExistingFile);
  synth->add_option("--out", corpus_out, "output directory")->required();

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const RunConfig&, std::ostream&);
  };
  const Command commands[] = {
      {"marl-train", "stage 1: meta-train the region network (--plain for the supervised baseline)",
       marl::app::CmdMarlTrain},
      {"relation-train", "stage 2: train the relation model from a stage-1 checkpoint (--marl-ckpt)",
       marl::app::CmdRelationTrain},
      {"evaluate", "score a checkpoint (--ckpt) on the test fold", marl::app::CmdEvaluate},
      {"crossval", "full cascade on every fold plus an aggregate report", marl::app::CmdCrossval},
  };
  std::map<std::string, std::unique_ptr<ConfigOptions>> options;
  std::map<std::string, CLI::App*> subcommands;
  for (const auto& c : commands) {
    subcommands[c.name] = app.add_subcommand(c.name, c.help);
    options[c.name] = std::make_unique<ConfigOptions>();
    RegisterConfigOptions(subcommands[c.name], *options[c.name]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return marl::app::CmdSynthGen(corpus_file, corpus_out, std::cout);
    for (const auto& c : commands) {
      if (subcommands[c.name]->parsed()) return c.run(Resolve(*options[c.name]), std::cout);
    }
  } catch (const marl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
