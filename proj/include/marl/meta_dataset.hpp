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

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "marl/rng.hpp"

namespace marl::data {

inline constexpr int kNumLandmarks = 49;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

using Landmarks = std::array<Point, kNumLandmarks>;

struct FrameRecord {
  int id = -1;  // position in the manifest, unique per index
  std::filesystem::path image_path;
  std::string subject_id;
  Landmarks landmarks{};
  std::vector<std::uint8_t> labels;
};

struct Subject {
  std::string id;
  std::vector<FrameRecord> frames;
  int fold = -1;
};

// Frames grouped by subject, subjects kept in order of first appearance.
// Immutable once built; fold assignment is applied by SplitFolds, which
// returns a new index.
class SubjectIndex {
 public:
  SubjectIndex() = default;
  SubjectIndex(std::vector<Subject> subjects, int num_labels, int num_folds = 0);

  const std::vector<Subject>& subjects() const { return subjects_; }
  const Subject& subject(const std::string& id) const;
  int num_labels() const { return num_labels_; }
  int num_folds() const { return num_folds_; }
  std::size_t num_frames() const;

  // Frames of every subject in (role == test ? fold : any other fold),
  // in index order.
  std::vector<FrameRecord> Frames(bool test_role, int fold) const;
  std::vector<std::string> SubjectIds(bool test_role, int fold) const;

 private:
  std::vector<Subject> subjects_;
  int num_labels_ = 0;
  int num_folds_ = 0;
};

// One line per frame: image path, subject id, 98 landmark coordinates
// (x0 y0 x1 y1 ...), then C label bits; whitespace separated. Blank lines
// and `#` comments are skipped. Relative image paths resolve against the
// manifest's directory.
SubjectIndex LoadManifest(const std::filesystem::path& path, int num_labels);
SubjectIndex ParseManifest(const std::string& text, int num_labels,
                           const std::filesystem::path& base_dir = {},
                           const std::string& origin = "<manifest>");
std::string FormatManifestLine(const FrameRecord& record);

// Shuffles subjects with `seed` and deals them round-robin into n_folds.
SubjectIndex SplitFolds(const SubjectIndex& index, int n_folds, std::uint64_t seed);

enum class FoldRole { kTrain, kTest };

struct Episode {
  std::string task_id;
  std::vector<FrameRecord> support;
  std::vector<FrameRecord> query;
};

struct MetaBatch {
  std::vector<Episode> episodes;
};

// Episodic sampler over the subjects of one fold role. Subjects with fewer
// than support + query frames are left out (with a warning) but stay in the
// index for plain supervised training.
class EpisodeSampler {
 public:
  EpisodeSampler(const SubjectIndex& index, FoldRole role, int fold, int support, int query);

  MetaBatch Sample(int tasks, Rng& rng) const;
  std::size_t num_eligible() const { return eligible_.size(); }

 private:
  const SubjectIndex* index_;
  std::vector<std::size_t> eligible_;
  int support_;
  int query_;
};

MetaBatch SampleMetaBatch(const SubjectIndex& index, FoldRole role, int fold, int tasks, int support,
                          int query, Rng& rng);

// Fraction of frames with each label active, over `frames`.
std::vector<double> OccurrenceRates(const std::vector<FrameRecord>& frames, int num_labels);

}  // namespace marl::data
