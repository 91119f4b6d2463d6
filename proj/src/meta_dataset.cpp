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

#include "marl/meta_dataset.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "marl/errors.hpp"
#include "marl/kv_config.hpp"
#include "marl/log.hpp"

namespace marl::data {
namespace {

std::vector<std::string> Tokenize(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return tokens;
}

bool ToDouble(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

SubjectIndex::SubjectIndex(std::vector<Subject> subjects, int num_labels, int num_folds)
    : subjects_(std::move(subjects)), num_labels_(num_labels), num_folds_(num_folds) {}

const Subject& SubjectIndex::subject(const std::string& id) const {
  for (const auto& s : subjects_) {
    if (s.id == id) return s;
  }
  throw ConfigError("unknown subject `" + id + "`");
}

std::size_t SubjectIndex::num_frames() const {
  std::size_t n = 0;
  for (const auto& s : subjects_) n += s.frames.size();
  return n;
}

std::vector<FrameRecord> SubjectIndex::Frames(bool test_role, int fold) const {
  std::vector<FrameRecord> out;
  for (const auto& s : subjects_) {
    if ((s.fold == fold) == test_role) out.insert(out.end(), s.frames.begin(), s.frames.end());
  }
  return out;
}

std::vector<std::string> SubjectIndex::SubjectIds(bool test_role, int fold) const {
  std::vector<std::string> out;
  for (const auto& s : subjects_) {
    if ((s.fold == fold) == test_role) out.push_back(s.id);
  }
  return out;
}

SubjectIndex ParseManifest(const std::string& text, int num_labels, const std::filesystem::path& base_dir,
                           const std::string& origin) {
  if (num_labels <= 0) throw ConfigError("label count must be positive");
  const std::size_t expected = 2 + 2 * kNumLandmarks + static_cast<std::size_t>(num_labels);
  std::vector<Subject> subjects;
  std::map<std::string, std::size_t> position;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  int next_id = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto tokens = Tokenize(line);
    if (tokens.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (tokens.size() < 2) throw ParseError(where + ": missing subject id");

    // Field count is fixed by the landmark count and C; a short landmark
    // block and a wrong label count are indistinguishable by count alone.
    if (tokens.size() != expected) {
      throw SchemaError(where + ": expected 2 + " + std::to_string(2 * kNumLandmarks) +
                        " landmark values + " + std::to_string(num_labels) + " labels = " +
                        std::to_string(expected) + " fields, found " + std::to_string(tokens.size()));
    }
    for (std::size_t i = 2; i < 2 + 2 * kNumLandmarks; ++i) {
      double v;
      if (!ToDouble(tokens[i], v)) throw ParseError(where + ": malformed landmark value `" + tokens[i] + "`");
    }

    FrameRecord rec;
    rec.id = next_id++;
    rec.image_path = tokens[0];
    if (rec.image_path.is_relative() && !base_dir.empty()) rec.image_path = base_dir / rec.image_path;
    rec.subject_id = tokens[1];
    for (int k = 0; k < kNumLandmarks; ++k) {
      double x, y;
      ToDouble(tokens[2 + 2 * k], x);
      ToDouble(tokens[3 + 2 * k], y);
      if (!std::isfinite(x) || !std::isfinite(y)) throw ParseError(where + ": non-finite landmark");
      rec.landmarks[k] = {x, y};
    }
    rec.labels.resize(num_labels);
    for (int c = 0; c < num_labels; ++c) {
      const auto& t = tokens[2 + 2 * kNumLandmarks + c];
      if (t != "0" && t != "1") throw ParseError(where + ": label must be 0 or 1, got `" + t + "`");
      rec.labels[c] = t == "1" ? 1 : 0;
    }

    auto [it, inserted] = position.emplace(rec.subject_id, subjects.size());
    if (inserted) subjects.push_back(Subject{rec.subject_id, {}, -1});
    subjects[it->second].frames.push_back(std::move(rec));
  }
  return SubjectIndex(std::move(subjects), num_labels);
}

SubjectIndex LoadManifest(const std::filesystem::path& path, int num_labels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ParseManifest(buffer.str(), num_labels, path.parent_path(), path.string());
}

std::string FormatManifestLine(const FrameRecord& record) {
  std::ostringstream os;
  os << record.image_path.generic_string() << ' ' << record.subject_id;
  for (const auto& p : record.landmarks) os << ' ' << FormatDouble(p.x) << ' ' << FormatDouble(p.y);
  for (auto l : record.labels) os << ' ' << static_cast<int>(l);
  return os.str();
}

SubjectIndex SplitFolds(const SubjectIndex& index, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ConfigError("fold count must be at least 2");
  if (index.subjects().size() < static_cast<std::size_t>(n_folds)) {
    throw ConfigError("cannot split " + std::to_string(index.subjects().size()) + " subjects into " +
                      std::to_string(n_folds) + " folds");
  }
  std::vector<std::size_t> order(index.subjects().size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = MakeStream(seed, "folds");
  Shuffle(order, rng);
  std::vector<Subject> subjects = index.subjects();
  for (std::size_t i = 0; i < order.size(); ++i) {
    subjects[order[i]].fold = static_cast<int>(i % static_cast<std::size_t>(n_folds));
  }
  return SubjectIndex(std::move(subjects), index.num_labels(), n_folds);
}

EpisodeSampler::EpisodeSampler(const SubjectIndex& index, FoldRole role, int fold, int support, int query)
    : index_(&index), support_(support), query_(query) {
  if (support < 1 || query < 1) throw ConfigError("support and query sizes must be at least 1");
  const bool test_role = role == FoldRole::kTest;
  const auto& subjects = index.subjects();
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if ((subjects[i].fold == fold) != test_role) continue;
    if (subjects[i].frames.size() < static_cast<std::size_t>(support + query)) {
      LogWarn("subject `" + subjects[i].id + "` has " + std::to_string(subjects[i].frames.size()) +
              " frames (< " + std::to_string(support + query) + "); excluded from episodic sampling");
      continue;
    }
    eligible_.push_back(i);
  }
}

MetaBatch EpisodeSampler::Sample(int tasks, Rng& rng) const {
  if (tasks < 1) throw ConfigError("task count must be at least 1");
  if (eligible_.size() < static_cast<std::size_t>(tasks)) {
    throw SamplingError("need " + std::to_string(tasks) + " eligible subjects, have " +
                        std::to_string(eligible_.size()));
  }
  // Partial Fisher-Yates draws distinct subjects, then distinct frames.
  std::vector<std::size_t> pool = eligible_;
  MetaBatch batch;
  batch.episodes.reserve(tasks);
  for (int t = 0; t < tasks; ++t) {
    const std::size_t pick = t + UniformIndex(rng, pool.size() - t);
    std::swap(pool[t], pool[pick]);
    const Subject& subject = index_->subjects()[pool[t]];
    std::vector<std::size_t> frames(subject.frames.size());
    std::iota(frames.begin(), frames.end(), 0);
    const std::size_t need = static_cast<std::size_t>(support_ + query_);
    for (std::size_t i = 0; i < need; ++i) {
      std::swap(frames[i], frames[i + UniformIndex(rng, frames.size() - i)]);
    }
    Episode ep;
    ep.task_id = subject.id;
    for (std::size_t i = 0; i < need; ++i) {
      (i < static_cast<std::size_t>(support_) ? ep.support : ep.query).push_back(subject.frames[frames[i]]);
    }
    batch.episodes.push_back(std::move(ep));
  }
  return batch;
}

MetaBatch SampleMetaBatch(const SubjectIndex& index, FoldRole role, int fold, int tasks, int support,
                          int query, Rng& rng) {
  return EpisodeSampler(index, role, fold, support, query).Sample(tasks, rng);
}

std::vector<double> OccurrenceRates(const std::vector<FrameRecord>& frames, int num_labels) {
  std::vector<double> rates(num_labels, 0.0);
  if (frames.empty()) return rates;
  for (const auto& f : frames)
    for (int c = 0; c < num_labels; ++c) rates[c] += f.labels[c];
  for (double& r : rates) r /= static_cast<double>(frames.size());
  return rates;
}

}  // namespace marl::data
