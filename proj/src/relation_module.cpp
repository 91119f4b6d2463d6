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

#include "marl/relation_module.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "marl/checkpoint.hpp"
#include "marl/errors.hpp"
#include "marl/kv_config.hpp"
#include "marl/log.hpp"

namespace marl::rel {
namespace fs = std::filesystem;

namespace {

constexpr const char* kAdamM = "adam.m/";
constexpr const char* kAdamV = "adam.v/";

std::string LayerName(int layer, const char* part) { return "enc.l" + std::to_string(layer) + "." + part; }

ag::Var Linear(const ag::Var& x2d, const ag::Var& w, const ag::Var& b) { return ag::AddBias(ag::MatMul(x2d, w), b); }

// [N*C, E] -> [N*heads, C, dh]
ag::Var SplitHeads(const ag::Var& x, int n, int c, int heads, int dh) {
  return ag::Reshape(ag::Permute(ag::Reshape(x, {n, c, heads, dh}), {0, 2, 1, 3}), {n * heads, c, dh});
}

ag::Var MergeHeads(const ag::Var& x, int n, int c, int heads, int dh) {
  return ag::Reshape(ag::Permute(ag::Reshape(x, {n, heads, c, dh}), {0, 2, 1, 3}), {n * c, heads * dh});
}

std::vector<std::string> AuNames(const net::RegionNetwork& model) {
  std::vector<std::string> names;
  for (const auto& r : model.table().rules()) names.push_back("AU" + r.au_id);
  return names;
}

bool IsOptimizerTensor(const std::string& name) {
  return name.rfind(kAdamM, 0) == 0 || name.rfind(kAdamV, 0) == 0;
}

}  // namespace

bool IsStageOneHead(const std::string& name) { return name.rfind("head.", 0) == 0; }

bool IsRegionParameter(const std::string& name) {
  return name.rfind("backbone.", 0) == 0 || name.rfind("branch.", 0) == 0;
}

void EncoderConfig::Validate(int embed_dim) const {
  if (!relational) return;
  if (layers < 1) throw ConfigError("encoder needs at least one layer");
  if (heads < 1 || embed_dim % heads != 0) {
    throw ConfigError("embedding width " + std::to_string(embed_dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (ffn_width < 0) throw ConfigError("ffn_width must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

ag::Var LayerNorm(const ag::Var& x, const ag::Var& gain, const ag::Var& bias, double eps) {
  const int f = x.shape().back();
  const ag::Var centered = ag::Sub(x, ag::ExpandLast(ag::MeanLastKeep(x), f));
  const ag::Var var = ag::MeanLastKeep(ag::Mul(centered, centered));
  const ag::Var inv = ag::Pow(ag::AddScalar(var, eps), -0.5);
  return ag::AddBias(ag::MulLast(ag::Mul(centered, ag::ExpandLast(inv, f)), gain), bias);
}

RelationModel::RelationModel(net::RegionNetwork region, EncoderConfig encoder)
    : region_(std::move(region)), encoder_(encoder) {
  encoder_.Validate(region_.config().embed_dim);
}

std::string RelationModel::Fingerprint() const {
  std::ostringstream os;
  os << region_.config().Canonical() << "\n" << region_.table().Serialize() << "\nencoder-v1 relational="
     << encoder_.relational << " layers=" << encoder_.layers << " heads=" << encoder_.heads
     << " ffn=" << encoder_.ResolvedFfn(region_.config().embed_dim) << " dropout=" << FormatDouble(encoder_.dropout);
  return marl::Fingerprint(os.str());
}

ParameterSet RelationModel::InitTop(std::uint64_t seed) const {
  const int c = region_.config().num_aus;
  const int e = region_.config().embed_dim;
  const int h = region_.config().head_hidden;
  const int f = encoder_.ResolvedFfn(e);
  Rng enc_rng = MakeStream(seed, "init/encoder");
  Rng cls_rng = MakeStream(seed, "init/classifier");
  const double relu_gain = std::sqrt(2.0);
  ParameterSet p;
  if (encoder_.relational) {
    for (int l = 0; l < encoder_.layers; ++l) {
      p.Add(LayerName(l, "ln1.gain"), ag::Parameter(Tensor(Shape{e}, 1.0)));
      p.Add(LayerName(l, "ln1.bias"), ag::Parameter(Tensor(Shape{e}, 0.0)));
      for (const char* proj : {"q", "k", "v", "o"}) {
        const std::string base = std::string("attn.w") + proj;
        p.Add(LayerName(l, base.c_str()), ag::Parameter(net::HeNormal({e, e}, e, 1.0, enc_rng)));
        p.Add(LayerName(l, (std::string("attn.b") + proj).c_str()), ag::Parameter(Tensor(Shape{e}, 0.0)));
      }
      p.Add(LayerName(l, "ln2.gain"), ag::Parameter(Tensor(Shape{e}, 1.0)));
      p.Add(LayerName(l, "ln2.bias"), ag::Parameter(Tensor(Shape{e}, 0.0)));
      p.Add(LayerName(l, "ffn.w1"), ag::Parameter(net::HeNormal({e, f}, e, relu_gain, enc_rng)));
      p.Add(LayerName(l, "ffn.b1"), ag::Parameter(Tensor(Shape{f}, 0.0)));
      p.Add(LayerName(l, "ffn.w2"), ag::Parameter(net::HeNormal({f, e}, f, 1.0, enc_rng)));
      p.Add(LayerName(l, "ffn.b2"), ag::Parameter(Tensor(Shape{e}, 0.0)));
    }
  }
  p.Add("cls.fc1.weight", ag::Parameter(net::HeNormal({c, e, h}, e, relu_gain, cls_rng)));
  p.Add("cls.fc1.bias", ag::Parameter(Tensor(Shape{c, h}, 0.0)));
  p.Add("cls.fc2.weight", ag::Parameter(net::HeNormal({c, h, 1}, h, 1.0, cls_rng)));
  p.Add("cls.fc2.bias", ag::Parameter(Tensor(Shape{c, 1}, 0.0)));
  return p;
}

ParameterSet RelationModel::Init(std::uint64_t seed) const {
  ParameterSet out = region_.Init(seed).Filter([](const std::string& n) { return !IsStageOneHead(n); });
  const ParameterSet top = InitTop(seed);
  for (std::size_t i = 0; i < top.size(); ++i) out.Add(top.names()[i], top.vars()[i]);
  return out;
}

ParameterSet RelationModel::ImportMarl(const fs::path& path, std::uint64_t seed, bool force) const {
  Checkpoint ckpt;
  try {
    ckpt = LoadCheckpoint(path);
    RequireFingerprint(ckpt, region_.Fingerprint(), force, path);
  } catch (const LoadError& e) {
    throw ImportError(std::string("cannot import stage-1 model: ") + e.what());
  }
  const ParameterSet expected = region_.Init(0);
  ParameterSet out;
  std::vector<std::string> offending;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const std::string& name = expected.names()[i];
    if (IsStageOneHead(name)) continue;
    const Tensor* t = ckpt.Find(name);
    if (t == nullptr) {
      offending.push_back(name + " (missing)");
    } else if (t->shape != expected.vars()[i].shape()) {
      offending.push_back(name + " (" + ShapeString(t->shape) + ", expected " +
                          ShapeString(expected.vars()[i].shape()) + ")");
    } else {
      out.Add(name, ag::Parameter(*t));
    }
  }
  if (!offending.empty()) {
    std::string msg = path.string() + ": cannot import stage-1 model:";
    for (const auto& o : offending) msg += "\n  " + o;
    throw ImportError(msg);
  }
  const ParameterSet top = InitTop(seed);
  for (std::size_t i = 0; i < top.size(); ++i) out.Add(top.names()[i], top.vars()[i]);
  return out;
}

ag::Var RelationModel::Encode(const ParameterSet& params, const ag::Var& tokens, Rng* rng, bool training,
                              std::vector<Tensor>* attention) const {
  const Shape& s = tokens.shape();
  const int e = region_.config().embed_dim;
  if (s.size() != 3 || s[2] != e) {
    throw ShapeError("encoder expects tokens [N, C, " + std::to_string(e) + "], got " + ShapeString(s));
  }
  if (!encoder_.relational) return tokens;
  const int n = s[0];
  const int c = s[1];
  const int heads = encoder_.heads;
  const int dh = e / heads;
  const bool drop = training && encoder_.dropout > 0.0;
  if (drop && rng == nullptr) throw ConfigError("dropout during training needs a random stream");
  auto dropout = [&](const ag::Var& v) { return drop ? ag::Dropout(v, encoder_.dropout, *rng, true) : v; };
  auto p = [&](int l, const char* part) -> const ag::Var& { return params[LayerName(l, part)]; };

  ag::Var x = tokens;
  for (int l = 0; l < encoder_.layers; ++l) {
    const ag::Var h = ag::Reshape(LayerNorm(x, p(l, "ln1.gain"), p(l, "ln1.bias")), {n * c, e});
    const ag::Var q = SplitHeads(Linear(h, p(l, "attn.wq"), p(l, "attn.bq")), n, c, heads, dh);
    const ag::Var k = SplitHeads(Linear(h, p(l, "attn.wk"), p(l, "attn.bk")), n, c, heads, dh);
    const ag::Var v = SplitHeads(Linear(h, p(l, "attn.wv"), p(l, "attn.bv")), n, c, heads, dh);
    const ag::Var weights =
        ag::SoftmaxLast(ag::Scale(ag::BatchMatMul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(dh))));
    if (attention != nullptr) attention->push_back(Tensor({n, heads, c, c}, weights.value().data));
    const ag::Var context = MergeHeads(ag::BatchMatMul(weights, v), n, c, heads, dh);
    const ag::Var attended = dropout(Linear(context, p(l, "attn.wo"), p(l, "attn.bo")));
    x = ag::Add(x, ag::Reshape(attended, {n, c, e}));

    const ag::Var h2 = ag::Reshape(LayerNorm(x, p(l, "ln2.gain"), p(l, "ln2.bias")), {n * c, e});
    const ag::Var ff = Linear(ag::Relu(Linear(h2, p(l, "ffn.w1"), p(l, "ffn.b1"))), p(l, "ffn.w2"), p(l, "ffn.b2"));
    x = ag::Add(x, ag::Reshape(dropout(ff), {n, c, e}));
  }
  return x;
}

ag::Var RelationModel::Classify(const ParameterSet& params, const ag::Var& tokens) const {
  const ag::Var per_au = ag::Permute(tokens, {1, 0, 2});  // [C, N, E]
  const ag::Var h = ag::Relu(net::BatchedLinear(per_au, params["cls.fc1.weight"], params["cls.fc1.bias"]));
  const ag::Var logits = net::BatchedLinear(h, params["cls.fc2.weight"], params["cls.fc2.bias"]);
  const int c = logits.shape()[0];
  const int n = logits.shape()[1];
  return ag::Permute(ag::Reshape(logits, {c, n}), {1, 0});
}

ag::Var RelationModel::Predict(const ParameterSet& params, const ag::Var& images,
                               const std::vector<data::Landmarks>& landmarks, Rng* rng, bool training) const {
  const ag::Var tokens = ag::Permute(region_.Embeddings(params, images, landmarks), {1, 0, 2});
  return ag::Sigmoid(Classify(params, Encode(params, tokens, rng, training)));
}

void RelationTrainConfig::Validate() const {
  if (epochs < 1) throw ConfigError("relation epochs must be >= 1");
  if (train_batch < 1 || test_batch < 1) throw ConfigError("batch sizes must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("relation lr must be >= 0");
  if (!(decay > 0.0)) throw ConfigError("lr decay factor must be > 0");
  if (decay_every < 1) throw ConfigError("lr decay interval must be >= 1");
}

double RelationTrainConfig::LearningRate(int epoch) const {
  return lr * std::pow(decay, static_cast<double>(epoch / decay_every));
}

EvalReport Evaluate(const RelationModel& model, const ParameterSet& params, data::FrameStore& store,
                    const std::vector<data::FrameRecord>& frames, int batch_size) {
  ag::NoGradGuard guard;
  const ParameterSet fixed = params.Detached();
  EvalReport report;
  report.counts = loss::ConfusionCounts(model.region().config().num_aus);
  for (std::size_t start = 0; start < frames.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(frames.size(), start + static_cast<std::size_t>(batch_size));
    const std::vector<data::FrameRecord> batch(frames.begin() + static_cast<std::ptrdiff_t>(start),
                                               frames.begin() + static_cast<std::ptrdiff_t>(end));
    const ag::Var probs = model.Predict(fixed, ag::Constant(store.Batch(batch)), store.BatchLandmarks(batch));
    report.counts.Add(loss::Threshold(probs.value()), data::LabelTensor(batch));
  }
  report.f1 = loss::F1FromCounts(report.counts);
  return report;
}

ParameterSet LoadRelationParameters(const fs::path& path, const RelationModel& model, bool force) {
  const Checkpoint ckpt = LoadCheckpoint(path);
  RequireFingerprint(ckpt, model.Fingerprint(), force, path);
  std::vector<NamedTensor> kept;
  for (const auto& nt : ckpt.tensors) {
    if (!IsOptimizerTensor(nt.name)) kept.push_back(nt);
  }
  ParameterSet loaded = ParameterSet::FromTensors(kept, false);
  if (!loaded.SameLayout(model.Init(0))) {
    throw LoadError(path.string() + ": parameter layout does not match the relation model");
  }
  return loaded;
}

TrainResult RunRelationTraining(const RelationTrainConfig& config, const loss::LossConfig& loss_config,
                                const RelationModel& model, data::FrameStore& store, const data::SubjectIndex& index,
                                int fold, const fs::path& marl_checkpoint, const meta::TrainOptions& options) {
  config.Validate();
  fs::create_directories(options.out_dir);
  const fs::path train_log = options.out_dir / "relation_train.log";
  const fs::path metrics_log = options.out_dir / "relation_metrics.log";
  const fs::path best_path = options.out_dir / "relation_best.ckpt";
  const std::string fingerprint = model.Fingerprint();
  const loss::LossWeights weights = meta::TrainingWeights(index, fold, AuNames(model.region()));
  const std::vector<data::FrameRecord> train_frames = index.Frames(false, fold);
  const std::vector<data::FrameRecord> test_frames = index.Frames(true, fold);
  if (train_frames.empty() || test_frames.empty()) throw SamplingError("fold has no training or test frames");
  auto trainable = [&config](const std::string& name) { return !(config.freeze_backbone && IsRegionParameter(name)); };

  ParameterSet params;
  meta::AdamState adam;
  int start_epoch = 0;
  long long step = 0;
  double best = -1.0;
  const int latest = options.resume ? meta::LatestEpochCheckpoint(options.out_dir, "relation") : 0;
  if (latest > 0) {
    const fs::path path = options.out_dir / ("relation_epoch_" + std::to_string(latest) + ".ckpt");
    const Checkpoint ckpt = LoadCheckpoint(path);
    RequireFingerprint(ckpt, fingerprint, options.force, path);
    params = LoadRelationParameters(path, model, true);
    for (const auto& name : params.names()) {
      if (!trainable(name)) continue;
      const Tensor* m = ckpt.Find(kAdamM + name);
      const Tensor* v = ckpt.Find(kAdamV + name);
      if (m == nullptr || v == nullptr) throw LoadError(path.string() + ": missing optimizer state for " + name);
      adam.m.push_back(*m);
      adam.v.push_back(*v);
    }
    start_epoch = latest;
    step = ParseInt("step", ckpt.meta.at("step"));
    adam.step = ParseInt("adam_step", ckpt.meta.at("adam_step"));
    best = ParseDouble("best_score", ckpt.meta.at("best_score"));
    meta::TrimEpochLog(train_log, latest);
    meta::TrimEpochLog(metrics_log, latest);
    LogInfo("resuming from " + path.string());
  } else {
    if (marl_checkpoint.empty()) throw ConfigError("relation training needs a stage-1 checkpoint (--marl-ckpt)");
    params = model.ImportMarl(marl_checkpoint, DeriveSeed(options.seed, "relation/init"), options.force);
    std::ofstream(train_log, std::ios::trunc) << "# epoch step loss\n";
    std::ofstream(metrics_log, std::ios::trunc) << "# epoch avg_f1 per-AU F1\n";
  }

  TrainResult result;
  bool have_report = false;
  std::ofstream tlog(train_log, std::ios::app);
  std::ofstream mlog(metrics_log, std::ios::app);
  for (int epoch = start_epoch + 1; epoch <= config.epochs; ++epoch) {
    meta::AdamConfig adam_config = config.adam;
    adam_config.lr = config.LearningRate(epoch - 1);
    std::vector<std::size_t> order(train_frames.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = MakeStream(options.seed, "relation/shuffle", static_cast<std::uint64_t>(epoch));
    Shuffle(order, shuffle_rng);
    int batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.train_batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.train_batch));
      std::vector<data::FrameRecord> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_frames[order[i]]);

      ParameterSet live;
      for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.names()[i];
        const Tensor& value = params.vars()[i].value();
        live.Add(name, trainable(name) ? ag::Parameter(value) : ag::Constant(value));
      }
      const ParameterSet learn = live.Filter(trainable);
      Rng dropout_rng = MakeStream(options.seed, "dropout", static_cast<std::uint64_t>(step));
      const ag::Var probs =
          model.Predict(live, ag::Constant(store.Batch(batch)), store.BatchLandmarks(batch), &dropout_rng, true);
      const ag::Var l = loss::AuLoss(probs, data::LabelTensor(batch), weights, loss_config);
      if (!std::isfinite(l.item())) {
        throw AdaptationError("non-finite loss at relation step " + std::to_string(step), static_cast<int>(step));
      }
      std::vector<Tensor> grads;
      for (const auto& g : ag::Grad(l, learn.vars(), false)) grads.push_back(g.value());
      const ParameterSet updated = meta::AdamUpdate(learn, grads, adam, adam_config);
      ParameterSet next;
      for (std::size_t i = 0; i < live.size(); ++i) {
        const std::string& name = live.names()[i];
        next.Add(name, trainable(name) ? updated[name] : live.vars()[i]);
      }
      params = std::move(next);
      ++step;
      ++batch_no;
      tlog << epoch << ' ' << batch_no << ' ' << FormatDouble(l.item()) << '\n';
    }
    tlog.flush();

    EvalReport report = Evaluate(model, params, store, test_frames, config.test_batch);
    mlog << epoch << ' ' << FormatDouble(report.f1.average);
    for (double f : report.f1.per_au) mlog << ' ' << FormatDouble(f);
    mlog << '\n';
    mlog.flush();
    LogInfo("relation epoch " + std::to_string(epoch) + " test avg F1 " + FormatDouble(report.f1.average));

    Checkpoint ckpt;
    ckpt.fingerprint = fingerprint;
    ckpt.tensors = params.ToTensors();
    ckpt.meta["kind"] = "relation";
    ckpt.meta["epoch"] = std::to_string(epoch);
    if (report.f1.average > best) {
      best = report.f1.average;
      ckpt.meta["best_score"] = FormatDouble(best);
      SaveCheckpoint(best_path, ckpt);
      result.best_report = report;
      have_report = true;
    }
    ckpt.meta["best_score"] = FormatDouble(best);
    ckpt.meta["step"] = std::to_string(step);
    ckpt.meta["adam_step"] = std::to_string(adam.step);
    std::size_t slot = 0;
    for (const auto& name : params.names()) {
      if (!trainable(name)) continue;
      ckpt.tensors.push_back({kAdamM + name, adam.m[slot]});
      ckpt.tensors.push_back({kAdamV + name, adam.v[slot]});
      ++slot;
    }
    SaveCheckpoint(options.out_dir / ("relation_epoch_" + std::to_string(epoch) + ".ckpt"), ckpt);
    if (epoch > 1) fs::remove(options.out_dir / ("relation_epoch_" + std::to_string(epoch - 1) + ".ckpt"));
  }

  if (!fs::exists(best_path)) throw IoError("training finished without writing " + best_path.string());
  result.best_checkpoint = best_path;
  result.best_score = best;
  if (!have_report) {
    result.best_report =
        Evaluate(model, LoadRelationParameters(best_path, model, true), store, test_frames, config.test_batch);
  }
  return result;
}

}  // namespace marl::rel
