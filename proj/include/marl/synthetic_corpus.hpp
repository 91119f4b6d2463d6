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

#include "marl/image.hpp"
#include "marl/kv_config.hpp"
#include "marl/landmark_geometry.hpp"
#include "marl/meta_dataset.hpp"
#include "marl/rng.hpp"

namespace marl::synth {

// "a>b:p": after the independent base draws, an active AU a switches AU b
// on with probability p. Rules apply in the order given.
struct Implication {
  int from = 0;  // label index
  int to = 0;
  double probability = 1.0;
};

struct CorpusSpec {
  int n_subjects = 12;
  int frames_per_subject = 100;
  std::vector<std::string> au_ids{"1", "2", "6", "10", "12", "17"};
  std::string au_table = "bp4d";  // bp4d, disfa, or a table file
  std::vector<double> base_rates{0.3};   // one value, or one per AU
  std::vector<double> amplitudes{1.0};   // pattern strength per AU
  std::vector<Implication> implies;
  // Scales the subject-constant pattern bias on AU regions, the subject
  // tint and the subject's landmark geometry. 0 renders every subject alike.
  double identity_strength = 0.7;
  double landmark_jitter = 1.5;  // per-frame landmark noise, pixels
  double noise_std = 6.0;        // per-frame pixel noise, 8-bit units
  double pattern_sigma = 9.0;    // pixels
  int image_side = 224;
  std::uint64_t seed = 1;

  int num_labels() const { return static_cast<int>(au_ids.size()); }
  double BaseRate(int i) const { return base_rates.size() == 1 ? base_rates[0] : base_rates.at(i); }
  double Amplitude(int i) const { return amplitudes.size() == 1 ? amplitudes[0] : amplitudes.at(i); }
  void Validate() const;
  geometry::AUCenterTable Table() const;

  static CorpusSpec FromConfig(const KeyValueConfig& config);
  KeyValueConfig ToConfig() const;
};

// Implication list syntax: comma separated "a>b:p" with AU ids.
std::vector<Implication> ParseImplications(const std::string& text, const std::vector<std::string>& au_ids);
std::string FormatImplications(const std::vector<Implication>& rules, const std::vector<std::string>& au_ids);

// Canonical frontal layout of the 49 landmarks for a side x side image.
data::Landmarks TemplateLandmarks(int side);

struct SubjectStyle {
  std::array<double, 4> affine{1, 0, 0, 1};  // row-major 2x2 about the image center
  std::array<double, 2> shift{0, 0};
  std::array<double, 3> tint{0, 0, 0};
  std::vector<double> bias;  // per AU, in [-identity_strength, identity_strength]
};

SubjectStyle MakeSubjectStyle(const CorpusSpec& spec, int subject);
std::vector<std::uint8_t> SampleLabels(const CorpusSpec& spec, Rng& rng);
data::Landmarks SubjectLandmarks(const CorpusSpec& spec, const SubjectStyle& style, Rng* jitter_rng);

// Pure function of its arguments; `noise_rng` only feeds pixel noise.
data::Image RenderFrame(const CorpusSpec& spec, const SubjectStyle& style, const data::Landmarks& landmarks,
                        const std::vector<std::uint8_t>& labels, Rng* noise_rng);

struct GeneratedFrame {
  data::FrameRecord record;
  data::Image image;
};

// Whole corpus in memory, image paths set to images/<subject>_<frame>.ppm.
std::vector<GeneratedFrame> GenerateFrames(const CorpusSpec& spec);

// Writes images/, manifest.txt and corpus.cfg under out_dir; returns the
// manifest path.
std::filesystem::path GenerateCorpus(const CorpusSpec& spec, const std::filesystem::path& out_dir);

data::SubjectIndex IndexFrames(const std::vector<GeneratedFrame>& frames, int num_labels);

// For every frame, the share of its nearest neighbours (self excluded,
// exact distance ties all counted) that belong to the same subject;
// the score is 1 minus the mean share. 0 means subjects are perfectly
// separated, higher means identities are mixed.
double IdentityMixingScore(const std::vector<std::vector<double>>& embeddings,
                           const std::vector<std::string>& subject_ids);

}  // namespace marl::synth
