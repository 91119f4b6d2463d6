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

#include "marl/run_config.hpp"

#include <algorithm>
#include <sstream>

#include "marl/errors.hpp"

namespace marl::app {
namespace {

const ConfigField* FindField(const std::string& key) {
  for (const auto& f : RunConfigSchema()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

void CheckType(const ConfigField& field, const std::string& value) {
  switch (field.type) {
    case FieldType::kInt:
      ParseInt(field.key, value);
      break;
    case FieldType::kDouble:
      ParseDouble(field.key, value);
      break;
    case FieldType::kBool:
      ParseBool(field.key, value);
      break;
    case FieldType::kIntList:
      ParseIntList(field.key, value);
      break;
    default:
      break;
  }
}

std::vector<std::string> SplitCommaList(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

const std::vector<ConfigField>& RunConfigSchema() {
  using T = FieldType;
  static const std::vector<ConfigField> schema = {
      // data and run layout
      {"manifest", "", T::kPath, "frame manifest"},
      {"au-ids", "1,2,4,6,7,10,12,14,15,17,23,24", T::kStringList, "AU ids, in manifest label order"},
      {"au-table", "bp4d", T::kString, "AU center rules: bp4d, disfa or a table file"},
      {"folds", "3", T::kInt, "subject-exclusive folds"},
      {"fold-id", "0", T::kInt, "fold used as the test fold"},
      {"seed", "0", T::kInt, "root random seed"},
      {"out", "runs/default", T::kPath, "output directory"},
      {"force", "false", T::kBool, "load checkpoints despite a config fingerprint mismatch"},
      {"resume", "true", T::kBool, "continue from the latest epoch checkpoint in --out"},
      {"simd", "auto", T::kString, "kernel backend: auto, scalar, avx2 or neon"},
      {"verbose", "false", T::kBool, "progress messages on stderr"},
      // region network
      {"input-side", "224", T::kInt, "network input side"},
      {"feature-side", "14", T::kInt, "backbone output grid side"},
      {"widths", "16,32,64,64", T::kIntList, "channels per backbone group"},
      {"kernels", "3,3,3,3", T::kIntList, "kernel size per backbone group"},
      {"strides", "2,2,2,2", T::kIntList, "stride per backbone group"},
      {"convs-per-group", "1", T::kInt, "convolutions per backbone group"},
      {"crop-size", "6", T::kInt, "crop side on the feature grid"},
      {"embed-dim", "150", T::kInt, "AU embedding width E"},
      {"head-hidden", "64", T::kInt, "hidden width of the per-AU classifiers"},
      {"pretrained-backbone", "", T::kPath, "checkpoint with backbone.* tensors"},
      // meta-learning
      {"plain", "false", T::kBool, "stage 1 as plain supervised training (baseline)"},
      {"inner-lr", "0.01", T::kDouble, "inner-loop step size alpha"},
      {"inner-steps", "1", T::kInt, "inner steps during meta-training"},
      {"test-inner-steps", "5", T::kInt, "adaptation steps during meta-testing"},
      {"tasks", "5", T::kInt, "tasks per meta-batch K"},
      {"support", "5", T::kInt, "support frames per task S"},
      {"query", "15", T::kInt, "query frames per task Q"},
      {"batches-per-epoch", "100", T::kInt, "meta-batches per epoch N"},
      {"epochs", "100", T::kInt, "meta-training epochs"},
      {"test-batches", "600", T::kInt, "meta-test batches"},
      {"order", "second", T::kString, "meta-gradient order: first or second"},
      {"outer-lr", "0.006", T::kDouble, "outer Adam step size beta"},
      {"adam-beta1", "0.9", T::kDouble, "Adam first-moment decay"},
      {"adam-beta2", "0.999", T::kDouble, "Adam second-moment decay"},
      {"adam-eps", "1e-08", T::kDouble, "Adam epsilon"},
      // losses
      {"mu", "1.5", T::kDouble, "weight of the Dice term"},
      {"dice-eps", "1", T::kDouble, "Dice smoothing term"},
      // relation stage
      {"marl-ckpt", "", T::kPath, "stage-1 checkpoint imported by relation-train"},
      {"ckpt", "", T::kPath, "checkpoint evaluated by evaluate"},
      {"relational", "true", T::kBool, "use the encoder (false: token-independent baseline)"},
      {"enc-layers", "2", T::kInt, "encoder layers"},
      {"enc-heads", "5", T::kInt, "attention heads (must divide embed-dim)"},
      {"enc-ffn", "0", T::kInt, "feed-forward width (0: 4E)"},
      {"enc-dropout", "0.1", T::kDouble, "encoder dropout"},
      {"rel-epochs", "30", T::kInt, "relation training epochs"},
      {"rel-train-batch", "16", T::kInt, "relation training batch size"},
      {"rel-test-batch", "32", T::kInt, "relation evaluation batch size"},
      {"rel-lr", "0.006", T::kDouble, "initial relation learning rate"},
      {"rel-decay", "0.3", T::kDouble, "learning-rate decay factor"},
      {"rel-decay-every", "2", T::kInt, "epochs between decays"},
      {"freeze-backbone", "false", T::kBool, "keep imported region parameters fixed in stage 2"},
  };
  return schema;
}

RunConfig::RunConfig() {
  for (const auto& f : RunConfigSchema()) values_.Set(f.key, f.default_value);
}

void RunConfig::Set(const std::string& key, const std::string& value) {
  const ConfigField* field = FindField(key);
  if (field == nullptr) throw ConfigError("unknown config key `" + key + "`");
  CheckType(*field, value);
  values_.Set(key, value);
}

void RunConfig::Merge(const KeyValueConfig& values, const std::string& origin) {
  for (const auto& [key, value] : values.values()) {
    if (FindField(key) == nullptr) throw ConfigError(origin + ": unknown config key `" + key + "`");
    Set(key, value);
  }
}

void RunConfig::MergeFile(const std::filesystem::path& path) {
  const KeyValueConfig file = KeyValueConfig::Load(path);
  KeyValueConfig resolved = file;
  // Relative paths in a config file are relative to the file.
  for (const auto& [key, value] : file.values()) {
    const ConfigField* field = FindField(key);
    if (field != nullptr && field->type == FieldType::kPath && !value.empty() &&
        std::filesystem::path(value).is_relative()) {
      resolved.Set(key, (path.parent_path() / value).lexically_normal().string());
    }
  }
  Merge(resolved, path.string());
}

long long RunConfig::Int(const std::string& key) const { return ParseInt(key, Get(key)); }
double RunConfig::Double(const std::string& key) const { return ParseDouble(key, Get(key)); }
bool RunConfig::Bool(const std::string& key) const { return ParseBool(key, Get(key)); }

void RunConfig::SaveSnapshot(const std::filesystem::path& path) const { values_.Save(path); }

std::vector<std::string> RunConfig::AuIds() const {
  auto ids = SplitCommaList(Get("au-ids"));
  if (ids.empty()) throw ConfigError("au-ids is empty");
  return ids;
}

std::vector<std::string> RunConfig::AuNames() const {
  std::vector<std::string> names;
  for (const auto& id : AuIds()) names.push_back("AU" + id);
  return names;
}

geometry::AUCenterTable RunConfig::AuTable() const {
  const std::string& t = Get("au-table");
  if (t == "bp4d") return geometry::AUCenterTable::Bp4d().Select(AuIds());
  if (t == "disfa") return geometry::AUCenterTable::Disfa().Select(AuIds());
  return geometry::AUCenterTable::Load(t).Select(AuIds());
}

net::RegionConfig RunConfig::Region() const {
  net::RegionConfig r;
  r.backbone.input_side = static_cast<int>(Int("input-side"));
  r.backbone.feature_side = static_cast<int>(Int("feature-side"));
  r.backbone.widths = ParseIntList("widths", Get("widths"));
  r.backbone.kernels = ParseIntList("kernels", Get("kernels"));
  r.backbone.strides = ParseIntList("strides", Get("strides"));
  r.backbone.convs_per_group = static_cast<int>(Int("convs-per-group"));
  r.num_aus = static_cast<int>(AuIds().size());
  r.crop_size = static_cast<int>(Int("crop-size"));
  r.embed_dim = static_cast<int>(Int("embed-dim"));
  r.head_hidden = static_cast<int>(Int("head-hidden"));
  r.Validate();
  return r;
}

meta::MetaConfig RunConfig::Meta() const {
  meta::MetaConfig m;
  m.inner_lr = Double("inner-lr");
  m.inner_steps = static_cast<int>(Int("inner-steps"));
  m.test_inner_steps = static_cast<int>(Int("test-inner-steps"));
  m.tasks = static_cast<int>(Int("tasks"));
  m.support = static_cast<int>(Int("support"));
  m.query = static_cast<int>(Int("query"));
  m.batches_per_epoch = static_cast<int>(Int("batches-per-epoch"));
  m.epochs = static_cast<int>(Int("epochs"));
  m.test_batches = static_cast<int>(Int("test-batches"));
  const std::string& order = Get("order");
  if (order == "second") {
    m.order = meta::Order::kSecond;
  } else if (order == "first") {
    m.order = meta::Order::kFirst;
  } else {
    throw ConfigError("order must be `first` or `second`, got `" + order + "`");
  }
  m.adam.lr = Double("outer-lr");
  m.adam.beta1 = Double("adam-beta1");
  m.adam.beta2 = Double("adam-beta2");
  m.adam.eps = Double("adam-eps");
  m.Validate();
  return m;
}

loss::LossConfig RunConfig::Loss() const {
  loss::LossConfig l;
  l.mu = Double("mu");
  l.epsilon = Double("dice-eps");
  if (!(l.mu >= 0.0)) throw ConfigError("mu must be >= 0");
  if (!(l.epsilon > 0.0)) throw ConfigError("dice-eps must be > 0");
  return l;
}

rel::EncoderConfig RunConfig::Encoder() const {
  rel::EncoderConfig e;
  e.layers = static_cast<int>(Int("enc-layers"));
  e.heads = static_cast<int>(Int("enc-heads"));
  e.ffn_width = static_cast<int>(Int("enc-ffn"));
  e.dropout = Double("enc-dropout");
  e.relational = Bool("relational");
  e.Validate(static_cast<int>(Int("embed-dim")));
  return e;
}

rel::RelationTrainConfig RunConfig::RelationTrain() const {
  rel::RelationTrainConfig r;
  r.epochs = static_cast<int>(Int("rel-epochs"));
  r.train_batch = static_cast<int>(Int("rel-train-batch"));
  r.test_batch = static_cast<int>(Int("rel-test-batch"));
  r.lr = Double("rel-lr");
  r.decay = Double("rel-decay");
  r.decay_every = static_cast<int>(Int("rel-decay-every"));
  r.freeze_backbone = Bool("freeze-backbone");
  r.adam.beta1 = Double("adam-beta1");
  r.adam.beta2 = Double("adam-beta2");
  r.adam.eps = Double("adam-eps");
  r.Validate();
  return r;
}

void RunConfig::Validate() const {
  for (const auto& f : RunConfigSchema()) CheckType(f, Get(f.key));
  const long long folds = Int("folds");
  const long long fold = Int("fold-id");
  if (folds < 2) throw ConfigError("folds must be at least 2");
  if (fold < 0 || fold >= folds) throw ConfigError("fold-id must lie in [0, folds)");
  const std::string& simd = Get("simd");
  if (simd != "auto" && simd != "scalar" && simd != "avx2" && simd != "neon") {
    throw ConfigError("simd must be auto, scalar, avx2 or neon");
  }
  const net::RegionConfig region = Region();
  if (AuTable().size() != region.num_aus) throw ConfigError("AU table does not cover au-ids");
  Meta();
  Loss();
  Encoder();
  RelationTrain();
}

}  // namespace marl::app
