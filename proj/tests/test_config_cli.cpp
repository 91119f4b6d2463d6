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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "marl/errors.hpp"
#include "marl/run_config.hpp"

using namespace marl;
using namespace marl::app;
namespace fs = std::filesystem;

namespace {

fs::path Scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "marl_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void Write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string Read(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int RunCli(const std::string& args) {
  const std::string cmd = std::string("\"") + MARL_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Tiny corpus and run settings shared by the CLI runs.
const char* kCorpus =
    "n_subjects = 6\nframes_per_subject = 10\nau_ids = 1,12\nbase_rates = 0.4\n"
    "image_side = 32\npattern_sigma = 2\nlandmark_jitter = 0.3\nseed = 3\n";
const char* kTinyRun =
    "input-side = 32\nfeature-side = 8\nwidths = 4,4,4,4\nstrides = 2,2,1,1\ncrop-size = 3\n"
    "embed-dim = 4\nhead-hidden = 4\nenc-heads = 2\nenc-ffn = 8\ntasks = 2\nsupport = 2\nquery = 3\n"
    "epochs = 1\nbatches-per-epoch = 1\ntest-batches = 1\nrel-epochs = 1\nrel-train-batch = 8\n";

}  // namespace

TEST_SUITE("config_cli") {
  TEST_CASE("defaults follow the reference training setup") {
    const RunConfig c;
    const meta::MetaConfig m = c.Meta();
    CHECK(m.inner_lr == 0.01);
    CHECK(m.adam.lr == 0.006);
    CHECK(m.tasks == 5);
    CHECK(m.support == 5);
    CHECK(m.query == 15);
    CHECK(m.batches_per_epoch == 100);
    CHECK(m.epochs == 100);
    CHECK(m.test_batches == 600);
    CHECK(m.order == meta::Order::kSecond);
    CHECK(c.Loss().mu == 1.5);
    CHECK(c.Loss().epsilon == 1.0);
    const rel::RelationTrainConfig r = c.RelationTrain();
    CHECK(r.epochs == 30);
    CHECK(r.train_batch == 16);
    CHECK(r.test_batch == 32);
    CHECK(r.lr == 0.006);
    CHECK(r.decay == 0.3);
    CHECK(r.decay_every == 2);
    CHECK(c.Int("folds") == 3);
    CHECK(c.Region().crop_size == 6);
    CHECK(c.Region().num_aus == 12);
    CHECK(c.AuIds().front() == "1");
    CHECK(c.AuNames().back() == "AU24");
    CHECK_NOTHROW(c.Validate());
  }

  TEST_CASE("layering: defaults, then file, then explicit settings") {
    const fs::path dir = Scratch("layers");
    Write(dir / "a.cfg", "tasks = 3\nseed = 9\nmanifest = data/m.txt\n");
    RunConfig c;
    c.MergeFile(dir / "a.cfg");
    c.Set("seed", "11");
    CHECK(c.Int("tasks") == 3);
    CHECK(c.Int("seed") == 11);
    CHECK(c.Int("query") == 15);
    // relative paths resolve against the file that names them
    CHECK(fs::path(c.String("manifest")) == dir / "data/m.txt");
  }

  TEST_CASE("unknown keys and ill-typed values are rejected") {
    const fs::path dir = Scratch("bad");
    RunConfig c;
    CHECK_THROWS_AS(c.Set("taks", "3"), ConfigError);
    CHECK_THROWS_AS(c.Set("tasks", "three"), ConfigError);
    CHECK_THROWS_AS(c.Set("widths", "4,x"), ConfigError);
    CHECK_THROWS_AS(c.Set("plain", "maybe"), ConfigError);
    Write(dir / "b.cfg", "colour = blue\n");
    CHECK_THROWS_AS(c.MergeFile(dir / "b.cfg"), ConfigError);
    CHECK_THROWS_AS(c.MergeFile(dir / "absent.cfg"), Error);
    c.Set("order", "third");
    CHECK_THROWS_AS(c.Validate(), ConfigError);
  }

  TEST_CASE("a snapshot reproduces the resolved configuration") {
    const fs::path dir = Scratch("snapshot");
    RunConfig c;
    c.Set("tasks", "4");
    c.Set("out", (dir / "run").string());
    c.Set("widths", "8,8,16,16");
    c.SaveSnapshot(dir / "snap.cfg");
    RunConfig d;
    d.MergeFile(dir / "snap.cfg");
    CHECK(d.Resolved().Serialize() == c.Resolved().Serialize());
    d.SaveSnapshot(dir / "snap2.cfg");
    CHECK(Read(dir / "snap.cfg") == Read(dir / "snap2.cfg"));
  }

  TEST_CASE("exit codes") {
    const fs::path dir = Scratch("exit");
    CHECK(RunCli("--help") == 0);
    CHECK(RunCli("marl-train --help") == 0);
    CHECK(RunCli("") == 1);
    CHECK(RunCli("marl-train --no-such-flag") == 1);
    CHECK(RunCli("marl-train --manifest " + (dir / "absent.txt").string() + " --out " + (dir / "never").string()) == 1);
    CHECK_FALSE(fs::exists(dir / "never"));
    CHECK(RunCli("relation-train --out " + dir.string()) == 1);
    CHECK(RunCli("evaluate --out " + dir.string()) == 1);
    CHECK(RunCli("marl-train --tasks abc") == 1);
    CHECK(RunCli("synth-gen --corpus " + (dir / "absent.cfg").string() + " --out " + dir.string()) == 1);
  }

  TEST_CASE("cascade and cross-validation at smoke scale") {
    const fs::path dir = Scratch("cascade");
    Write(dir / "corpus.cfg", kCorpus);
    REQUIRE(RunCli("synth-gen --corpus " + (dir / "corpus.cfg").string() + " --out " + (dir / "corpus").string()) == 0);
    CHECK(fs::exists(dir / "corpus" / "manifest.txt"));
    CHECK(fs::exists(dir / "corpus" / "run.cfg"));

    const std::string manifest_line = "manifest = " + (dir / "corpus" / "manifest.txt").string() + "\n";
    Write(dir / "run.cfg", manifest_line + kTinyRun + "au-ids = 1,12\n");

    const std::string cfg = "--config " + (dir / "run.cfg").string();
    REQUIRE(RunCli("marl-train " + cfg + " --out " + (dir / "s1").string()) == 0);
    CHECK(fs::exists(dir / "s1" / "marl_best.ckpt"));
    CHECK(fs::exists(dir / "s1" / "marl_report.txt"));
    CHECK(fs::exists(dir / "s1" / "marl-train.resolved.cfg"));

    REQUIRE(RunCli("relation-train " + cfg + " --out " + (dir / "s2").string() + " --marl-ckpt " +
                   (dir / "s1" / "marl_best.ckpt").string()) == 0);
    CHECK(fs::exists(dir / "s2" / "relation_best.ckpt"));
    CHECK(RunCli("evaluate " + cfg + " --out " + (dir / "ev").string() + " --ckpt " +
                 (dir / "s2" / "relation_best.ckpt").string()) == 0);
    CHECK(fs::exists(dir / "ev" / "eval_report.txt"));

    // a stage-1 checkpoint from a different configuration is refused
    CHECK(RunCli("relation-train " + cfg + " --embed-dim 6 --out " + (dir / "s3").string() + " --marl-ckpt " +
                 (dir / "s1" / "marl_best.ckpt").string()) == 1);

    REQUIRE(RunCli("crossval " + cfg + " --folds 3 --out " + (dir / "cv").string()) == 0);
    for (int k = 0; k < 3; ++k) {
      CHECK(fs::exists(dir / "cv" / ("fold_" + std::to_string(k)) / "marl_report.txt"));
      CHECK(fs::exists(dir / "cv" / ("fold_" + std::to_string(k)) / "relation_report.txt"));
    }
    const std::string report = Read(dir / "cv" / "crossval_report.txt");
    CHECK(report.find("Avg") != std::string::npos);
    CHECK(report.find("AU12") != std::string::npos);

    // the resolved snapshot alone reproduces the run
    REQUIRE(RunCli("marl-train --config " + (dir / "s1" / "marl-train.resolved.cfg").string() + " --out " +
                   (dir / "s1b").string()) == 0);
    CHECK(Read(dir / "s1" / "marl_report.txt") == Read(dir / "s1b" / "marl_report.txt"));
  }
}
