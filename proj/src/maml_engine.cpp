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

#include "marl/maml_engine.hpp"

#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "marl/checkpoint.hpp"
#include "marl/errors.hpp"
#include "marl/kv_config.hpp"
#include "marl/log.hpp"
#include "marl/rng.hpp"

namespace marl::meta {
namespace fs = std::filesystem;

namespace {

constexpr const char* kAdamM = "adam.m/";
constexpr const char* kAdamV = "adam.v/";

bool AllFinite(const std::vector<Tensor>& ts) {
  for (const auto& t : ts) {
    if (!t.AllFinite()) return false;
  }
  return true;
}

std::vector<std::string> AuNames(const net::RegionNetwork& model) {
  std::vector<std::string> names;
  for (const auto& r : model.table().rules()) names.push_back("AU" + r.au_id);
  return names;
}

Checkpoint StateCheckpoint(const MetaState& state, const std::string& fingerprint, bool with_optimizer) {
  Checkpoint ckpt;
  ckpt.fingerprint = fingerprint;
  ckpt.tensors = state.theta.ToTensors();
  if (with_optimizer) {
    for (std::size_t i = 0; i < state.theta.size() && i < state.adam.m.size(); ++i) {
      ckpt.tensors.push_back({kAdamM + state.theta.names()[i], state.adam.m[i]});
      ckpt.tensors.push_back({kAdamV + state.theta.names()[i], state.adam.v[i]});
    }
  }
  ckpt.meta["kind"] = "marl";
  ckpt.meta["epoch"] = std::to_string(state.epoch);
  ckpt.meta["outer_steps"] = std::to_string(state.outer_steps);
  ckpt.meta["adam_step"] = std::to_string(state.adam.step);
  ckpt.meta["best_score"] = FormatDouble(state.best_score);
  return ckpt;
}

std::string MetaValue(const Checkpoint& ckpt, const std::string& key, const fs::path& path) {
  auto it = ckpt.meta.find(key);
  if (it == ckpt.meta.end()) throw LoadError(path.string() + ": missing metadata '" + key + "'");
  return it->second;
}

MetaState RestoreState(const Checkpoint& ckpt, const fs::path& path) {
  MetaState state;
  std::vector<NamedTensor> params;
  std::vector<const Tensor*> m, v;
  for (const auto& nt : ckpt.tensors) {
    if (nt.name.rfind(kAdamM, 0) != 0 && nt.name.rfind(kAdamV, 0) != 0) params.push_back(nt);
  }
  state.theta = ParameterSet::FromTensors(params, true);
  for (const auto& name : state.theta.names()) {
    const Tensor* tm = ckpt.Find(kAdamM + name);
    const Tensor* tv = ckpt.Find(kAdamV + name);
    if (tm == nullptr || tv == nullptr) throw LoadError(path.string() + ": missing optimizer state for " + name);
    state.adam.m.push_back(*tm);
    state.adam.v.push_back(*tv);
  }
  state.epoch = static_cast<int>(ParseInt("epoch", MetaValue(ckpt, "epoch", path)));
  state.outer_steps = ParseInt("outer_steps", MetaValue(ckpt, "outer_steps", path));
  state.adam.step = ParseInt("adam_step", MetaValue(ckpt, "adam_step", path));
  state.best_score = ParseDouble("best_score", MetaValue(ckpt, "best_score", path));
  return state;
}

void CheckLayout(const ParameterSet& loaded, const ParameterSet& expected, const fs::path& path) {
  if (loaded.SameLayout(expected)) return;
  std::string msg = path.string() + ": parameter layout does not match the network:";
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const std::string& name = expected.names()[i];
    if (!loaded.Contains(name)) {
      msg += "\n  " + name + " (missing)";
    } else if (loaded[name].shape() != expected.vars()[i].shape()) {
      msg += "\n  " + name + " (" + ShapeString(loaded[name].shape()) + ", expected " +
             ShapeString(expected.vars()[i].shape()) + ")";
    }
  }
  throw LoadError(msg);
}

}  // namespace

// Highest n among marl_epoch_<n>.ckpt in dir, or 0.
int LatestEpochCheckpoint(const fs::path& dir, const std::string& prefix) {
  int best = 0;
  if (!fs::is_directory(dir)) return 0;
  const std::regex pattern(prefix + "_epoch_([0-9]+)\\.ckpt");
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) best = std::max(best, std::stoi(m[1].str()));
  }
  return best;
}

// Keeps only the lines whose leading epoch number is <= `epoch`, so a run
// resumed after an interruption does not repeat log lines.
void TrimEpochLog(const fs::path& path, int epoch) {
  std::ifstream in(path);
  if (!in) return;
  std::string line;
  std::string kept;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    int e = 0;
    if (line.empty() || line[0] == '#' || ((ls >> e) && e <= epoch)) kept += line + '\n';
  }
  in.close();
  std::ofstream(path, std::ios::trunc) << kept;
}

void MetaConfig::Validate() const {
  if (!(inner_lr >= 0.0)) throw ConfigError("inner_lr must be >= 0");
  if (!(adam.lr >= 0.0)) throw ConfigError("outer_lr must be >= 0");
  if (inner_steps < 1) throw ConfigError("inner_steps must be >= 1");
  if (test_inner_steps < 0) throw ConfigError("test_inner_steps must be >= 0");
  if (tasks < 1) throw ConfigError("tasks (K) must be >= 1");
  if (support < 1 || query < 1) throw ConfigError("support and query sizes must be >= 1");
  if (batches_per_epoch < 1 || epochs < 1) throw ConfigError("epochs and batches_per_epoch must be >= 1");
  if (test_batches < 1) throw ConfigError("test_batches must be >= 1");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
    throw ConfigError("invalid Adam settings");
  }
}

ParameterSet AdamUpdate(const ParameterSet& theta, const std::vector<Tensor>& grads, AdamState& state,
                        const AdamConfig& config) {
  if (grads.size() != theta.size()) throw ShapeError("Adam: gradient count does not match parameters");
  if (state.m.empty()) {
    for (const auto& v : theta.vars()) {
      state.m.emplace_back(v.shape(), 0.0);
      state.v.emplace_back(v.shape(), 0.0);
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  std::vector<NamedTensor> updated;
  updated.reserve(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const Tensor& g = grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    Tensor next = theta.vars()[i].value();
    for (std::size_t j = 0; j < next.size(); ++j) {
      m.data[j] = config.beta1 * m.data[j] + (1.0 - config.beta1) * g.data[j];
      v.data[j] = config.beta2 * v.data[j] + (1.0 - config.beta2) * g.data[j] * g.data[j];
      next.data[j] -= config.lr * (m.data[j] / c1) / (std::sqrt(v.data[j] / c2) + config.eps);
    }
    updated.push_back({theta.names()[i], std::move(next)});
  }
  return ParameterSet::FromTensors(updated, true);
}

ParameterSet InnerAdapt(const ParameterSet& theta, const LossFn& loss, double alpha, int steps, Order order,
                        int batch_id, double* first_loss) {
  if (steps == 0 || alpha == 0.0) {
    if (first_loss != nullptr) {
      ag::NoGradGuard guard;
      *first_loss = loss(theta).item();
    }
    return theta;
  }
  ParameterSet current = theta;
  for (int s = 0; s < steps; ++s) {
    const ag::Var l = loss(current);
    if (!std::isfinite(l.item())) {
      throw AdaptationError("non-finite inner loss in batch " + std::to_string(batch_id), batch_id);
    }
    if (s == 0 && first_loss != nullptr) *first_loss = l.item();
    if (order == Order::kSecond) {
      current = current.AddScaled(ag::Grad(l, current.vars(), true), -alpha);
    } else {
      std::vector<ag::Var> grads = ag::Grad(l, current.vars(), false);
      for (auto& g : grads) g = ag::Constant(g.value());
      current = current.AddScaled(grads, -alpha);
    }
  }
  return current;
}

MetaGradient ComputeMetaGradient(const ParameterSet& theta, const std::vector<TaskLosses>& tasks, double alpha,
                                 int steps, Order order, int batch_id) {
  if (tasks.empty()) throw SamplingError("meta-batch has no tasks");
  MetaGradient out;
  for (const auto& v : theta.vars()) out.grads.emplace_back(v.shape(), 0.0);
  const double inv_k = 1.0 / static_cast<double>(tasks.size());
  for (const auto& task : tasks) {
    double inner = 0.0;
    const ParameterSet adapted = InnerAdapt(theta, task.inner, alpha, steps, order, batch_id, &inner);
    const ag::Var q = task.outer(adapted);
    if (!std::isfinite(q.item())) {
      throw AdaptationError("non-finite query loss in batch " + std::to_string(batch_id), batch_id);
    }
    const std::vector<ag::Var> g = ag::Grad(q, theta.vars(), false);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Tensor& gi = g[i].value();
      for (std::size_t j = 0; j < gi.size(); ++j) out.grads[i].data[j] += inv_k * gi.data[j];
    }
    out.inner_loss += inv_k * inner;
    out.outer_loss += inv_k * q.item();
  }
  return out;
}

StepResult OuterStep(MetaState& state, const std::vector<TaskLosses>& tasks, const MetaConfig& config,
                     int batch_id) {
  MetaGradient mg = ComputeMetaGradient(state.theta, tasks, config.inner_lr, config.inner_steps, config.order,
                                        batch_id);
  if (!AllFinite(mg.grads)) {
    throw AdaptationError("non-finite meta-gradient in batch " + std::to_string(batch_id) + "; step rejected",
                          batch_id);
  }
  state.theta = AdamUpdate(state.theta, mg.grads, state.adam, config.adam);
  ++state.outer_steps;
  return {mg.inner_loss, mg.outer_loss};
}

TaskLosses MakeTaskLosses(const net::RegionNetwork& model, data::FrameStore& store, const data::Episode& episode,
                          const loss::LossWeights& weights, const loss::LossConfig& loss_config) {
  struct Split {
    Tensor images;
    std::vector<data::Landmarks> landmarks;
    Tensor labels;
  };
  auto load = [&store](const std::vector<data::FrameRecord>& frames) {
    return std::make_shared<const Split>(
        Split{store.Batch(frames), store.BatchLandmarks(frames), data::LabelTensor(frames)});
  };
  auto support = load(episode.support);
  auto query = load(episode.query);
  const net::RegionNetwork* m = &model;
  TaskLosses t;
  t.inner = [m, support, weights](const ParameterSet& p) {
    return loss::WeightedBce(m->Predict(p, ag::Constant(support->images), support->landmarks), support->labels,
                             weights);
  };
  t.outer = [m, query, weights, loss_config](const ParameterSet& p) {
    return loss::AuLoss(m->Predict(p, ag::Constant(query->images), query->landmarks), query->labels, weights,
                        loss_config);
  };
  return t;
}

MetaTestReport MetaTest(const net::RegionNetwork& model, const ParameterSet& theta0, data::FrameStore& store,
                        const data::SubjectIndex& index, int fold, const MetaConfig& config,
                        const loss::LossWeights& weights, std::uint64_t seed) {
  const data::EpisodeSampler sampler(index, data::FoldRole::kTest, fold, config.support, config.query);
  // A small test fold may hold fewer subjects than K; batches then use them all.
  const int tasks = static_cast<int>(std::min<std::size_t>(config.tasks, sampler.num_eligible()));
  if (tasks == 0) throw SamplingError("no test-fold subject has enough frames for an episode");
  if (tasks < config.tasks) {
    LogInfo("meta-test: only " + std::to_string(tasks) + " eligible test subjects; using " + std::to_string(tasks) +
            " tasks per batch");
  }
  Rng rng = MakeStream(seed, "meta_test");
  MetaTestReport report;
  report.counts = loss::ConfusionCounts(index.num_labels());
  const ParameterSet base = theta0.Detached();
  const loss::LossConfig unused;
  for (int b = 0; b < config.test_batches; ++b) {
    const data::MetaBatch batch = sampler.Sample(tasks, rng);
    for (const auto& episode : batch.episodes) {
      ParameterSet adapted = base;
      if (config.test_inner_steps > 0 && config.inner_lr > 0.0) {
        const TaskLosses losses = MakeTaskLosses(model, store, {episode.task_id, episode.support, {}}, weights, unused);
        adapted = InnerAdapt(base.CloneLeaves(), losses.inner, config.inner_lr, config.test_inner_steps,
                             Order::kFirst, b)
                      .Detached();
      }
      ag::NoGradGuard guard;
      const Tensor images = store.Batch(episode.query);
      const ag::Var probs = model.Predict(adapted, ag::Constant(images), store.BatchLandmarks(episode.query));
      report.counts.Add(loss::Threshold(probs.value()), data::LabelTensor(episode.query));
      ++report.episodes;
    }
  }
  report.f1 = loss::F1FromCounts(report.counts);
  return report;
}

loss::LossWeights TrainingWeights(const data::SubjectIndex& index, int fold, const std::vector<std::string>& au_names) {
  const auto rates = data::OccurrenceRates(index.Frames(false, fold), index.num_labels());
  return loss::ComputeWeights(rates, au_names);
}

ParameterSet LoadMarlParameters(const fs::path& path, const net::RegionNetwork& model, bool force) {
  const Checkpoint ckpt = LoadCheckpoint(path);
  RequireFingerprint(ckpt, model.Fingerprint(), force, path);
  std::vector<NamedTensor> params;
  for (const auto& nt : ckpt.tensors) {
    if (nt.name.rfind(kAdamM, 0) != 0 && nt.name.rfind(kAdamV, 0) != 0) params.push_back(nt);
  }
  ParameterSet loaded = ParameterSet::FromTensors(params, false);
  CheckLayout(loaded, model.Init(0), path);
  return loaded;
}

TrainResult RunMetaTraining(const MetaConfig& config, const loss::LossConfig& loss_config,
                            const net::RegionNetwork& model, data::FrameStore& store,
                            const data::SubjectIndex& index, int fold, const TrainOptions& options) {
  config.Validate();
  fs::create_directories(options.out_dir);
  const fs::path train_log = options.out_dir / "marl_train.log";
  const fs::path metrics_log = options.out_dir / "marl_metrics.log";
  const fs::path best_path = options.out_dir / "marl_best.ckpt";
  const std::string fingerprint = model.Fingerprint();
  const std::vector<std::string> names = AuNames(model);
  const loss::LossWeights weights = TrainingWeights(index, fold, names);
  const data::EpisodeSampler sampler(index, data::FoldRole::kTrain, fold, config.support, config.query);

  MetaState state;
  const int latest = options.resume ? LatestEpochCheckpoint(options.out_dir, "marl") : 0;
  if (latest > 0) {
    const fs::path path = options.out_dir / ("marl_epoch_" + std::to_string(latest) + ".ckpt");
    const Checkpoint ckpt = LoadCheckpoint(path);
    RequireFingerprint(ckpt, fingerprint, options.force, path);
    state = RestoreState(ckpt, path);
    CheckLayout(state.theta, model.Init(0), path);
    if (fs::exists(best_path)) state.best_path = best_path.string();
    TrimEpochLog(train_log, state.epoch);
    TrimEpochLog(metrics_log, state.epoch);
    LogInfo("resuming from " + path.string());
  } else {
    const std::uint64_t init_seed = DeriveSeed(options.seed, "init");
    state.theta = options.pretrained_backbone.empty() ? model.Init(init_seed)
                                                      : model.InitFromPretrained(options.pretrained_backbone, init_seed);
    std::ofstream(train_log, std::ios::trunc) << "# epoch step inner_loss outer_loss\n";
    std::ofstream(metrics_log, std::ios::trunc) << "# epoch avg_f1 per-AU F1\n";
  }

  TrainResult result;
  bool have_report = false;
  std::ofstream tlog(train_log, std::ios::app);
  std::ofstream mlog(metrics_log, std::ios::app);
  for (int epoch = state.epoch + 1; epoch <= config.epochs; ++epoch) {
    for (int step = 1; step <= config.batches_per_epoch; ++step) {
      Rng rng = MakeStream(options.seed, "sampling", static_cast<std::uint64_t>(state.outer_steps));
      const data::MetaBatch batch = sampler.Sample(config.tasks, rng);
      std::vector<TaskLosses> tasks;
      StepResult r;
      if (options.plain) {
        for (const auto& ep : batch.episodes) {
          data::Episode all{ep.task_id, {}, ep.support};
          all.query.insert(all.query.end(), ep.query.begin(), ep.query.end());
          all.support = all.query;
          tasks.push_back(MakeTaskLosses(model, store, all, weights, loss_config));
        }
        MetaGradient mg = ComputeMetaGradient(state.theta, tasks, config.inner_lr, 0, config.order, step);
        if (!AllFinite(mg.grads)) throw AdaptationError("non-finite gradient in batch " + std::to_string(step), step);
        state.theta = AdamUpdate(state.theta, mg.grads, state.adam, config.adam);
        ++state.outer_steps;
        r = {mg.inner_loss, mg.outer_loss};
      } else {
        for (const auto& ep : batch.episodes) tasks.push_back(MakeTaskLosses(model, store, ep, weights, loss_config));
        r = OuterStep(state, tasks, config, step);
      }
      tlog << epoch << ' ' << step << ' ' << FormatDouble(r.inner_loss) << ' ' << FormatDouble(r.outer_loss) << '\n';
    }
    tlog.flush();
    MetaTestReport report = MetaTest(model, state.theta, store, index, fold, config, weights, options.seed);
    mlog << epoch << ' ' << FormatDouble(report.f1.average);
    for (double f : report.f1.per_au) mlog << ' ' << FormatDouble(f);
    mlog << '\n';
    mlog.flush();
    LogInfo("epoch " + std::to_string(epoch) + " meta-test avg F1 " + FormatDouble(report.f1.average));

    state.epoch = epoch;
    if (report.f1.average > state.best_score) {
      state.best_score = report.f1.average;
      state.best_path = best_path.string();
      Checkpoint best = StateCheckpoint(state, fingerprint, false);
      best.meta["mode"] = options.plain ? "plain" : "meta";
      SaveCheckpoint(best_path, best);
      result.best_report = report;
      have_report = true;
    }
    Checkpoint ckpt = StateCheckpoint(state, fingerprint, true);
    ckpt.meta["mode"] = options.plain ? "plain" : "meta";
    SaveCheckpoint(options.out_dir / ("marl_epoch_" + std::to_string(epoch) + ".ckpt"), ckpt);
    if (epoch > 1) fs::remove(options.out_dir / ("marl_epoch_" + std::to_string(epoch - 1) + ".ckpt"));
  }

  if (!fs::exists(best_path)) throw IoError("training finished without writing " + best_path.string());
  result.best_checkpoint = best_path;
  result.best_score = state.best_score;
  if (!have_report) {
    result.best_report = MetaTest(model, LoadMarlParameters(best_path, model, true), store, index, fold, config,
                                  weights, options.seed);
  }
  return result;
}

}  // namespace marl::meta
