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

#include "marl/synthetic_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "marl/errors.hpp"

namespace marl::synth {
namespace fs = std::filesystem;

namespace {

// Canonical layout for a 224-pixel frontal face; mirror-symmetric about x = 112.
constexpr double kTemplate[data::kNumLandmarks][2] = {
    {56, 74},   {66, 70},   {76, 68},   {86, 69},   {96, 72},    // image-left brow, outer to inner
    {128, 72},  {138, 69},  {148, 68},  {158, 70},  {168, 74},   // image-right brow, inner to outer
    {112, 92},  {112, 102}, {112, 112}, {112, 122},              // nose ridge
    {98, 132},  {105, 134}, {112, 135}, {119, 134}, {126, 132},  // nostrils
    {66, 95},   {73, 90},   {83, 90},   {92, 95},   {83, 99},  {73, 99},     // image-left eye
    {132, 95},  {141, 90},  {151, 90},  {158, 95},  {151, 99}, {141, 99},    // image-right eye
    {88, 160},  {96, 154},  {104, 151}, {112, 152}, {120, 151}, {128, 154},  // outer lip
    {136, 160}, {128, 167}, {120, 170}, {112, 171}, {104, 170}, {96, 167},
    {100, 159}, {112, 158}, {124, 159}, {124, 163}, {112, 164}, {100, 163},  // inner lip
};

constexpr double kPalette[][3] = {
    {1.0, 0.6, 0.3}, {0.3, 1.0, 0.6}, {0.6, 0.3, 1.0}, {1.0, 1.0, 0.2},
    {0.2, 1.0, 1.0}, {1.0, 0.2, 1.0}, {0.8, 0.8, 0.8}, {1.0, 0.4, 0.4},
};
constexpr int kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

constexpr double kPatternGain = 70.0;
constexpr double kFeatureDarkening = 50.0;

double Symmetric(Rng& rng) { return 2.0 * Uniform01(rng) - 1.0; }

std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string JoinDoubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + FormatDouble(v[i]);
  return s;
}

int LabelIndex(const std::string& id, const std::vector<std::string>& au_ids) {
  auto it = std::find(au_ids.begin(), au_ids.end(), id);
  if (it == au_ids.end()) throw ConfigError("implication names AU `" + id + "`, which is not in au_ids");
  return static_cast<int>(it - au_ids.begin());
}

// Adds a Gaussian-windowed oriented grating centred at (cx, cy).
void StampPattern(std::vector<double>& canvas, int side, double cx, double cy, double sigma, double theta,
                  double strength, const double* color) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  const double wavelength = 1.3 * sigma;
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  const int x0 = std::max(0, static_cast<int>(cx) - radius);
  const int x1 = std::min(side - 1, static_cast<int>(cx) + radius);
  const int y0 = std::max(0, static_cast<int>(cy) - radius);
  const int y1 = std::min(side - 1, static_cast<int>(cy) + radius);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      const double envelope = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      const double grating = 0.6 + 0.4 * std::cos(2.0 * std::numbers::pi * (dx * ct + dy * st) / wavelength);
      const double v = strength * envelope * grating;
      double* px = &canvas[(static_cast<std::size_t>(y) * side + x) * 3];
      for (int c = 0; c < 3; ++c) px[c] += v * color[c];
    }
  }
}

}  // namespace

void CorpusSpec::Validate() const {
  if (n_subjects < 1 || frames_per_subject < 1) throw ConfigError("corpus needs subjects and frames");
  if (au_ids.empty()) throw ConfigError("corpus needs at least one AU");
  std::set<std::string> unique(au_ids.begin(), au_ids.end());
  if (unique.size() != au_ids.size()) throw ConfigError("au_ids contains duplicates");
  auto check_list = [this](const std::vector<double>& v, const char* key) {
    if (v.size() != 1 && v.size() != au_ids.size()) {
      throw ConfigError(std::string(key) + " needs one value or one per AU");
    }
  };
  check_list(base_rates, "base_rates");
  check_list(amplitudes, "amplitudes");
  for (double r : base_rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("base rates must lie in [0, 1]");
  }
  for (double a : amplitudes) {
    if (!(a >= 0.0)) throw ConfigError("amplitudes must be >= 0");
  }
  for (const auto& rule : implies) {
    if (rule.from < 0 || rule.to < 0 || rule.from >= num_labels() || rule.to >= num_labels() || rule.from == rule.to) {
      throw ConfigError("invalid implication between label indices");
    }
    if (!(rule.probability >= 0.0 && rule.probability <= 1.0)) {
      throw ConfigError("implication probabilities must lie in [0, 1]");
    }
  }
  if (!(identity_strength >= 0.0 && identity_strength <= 1.0)) throw ConfigError("identity_strength must lie in [0, 1]");
  if (!(landmark_jitter >= 0.0) || !(noise_std >= 0.0)) throw ConfigError("jitter and noise must be >= 0");
  if (!(pattern_sigma > 0.0)) throw ConfigError("pattern_sigma must be > 0");
  if (image_side < 32) throw ConfigError("image_side must be at least 32");
}

geometry::AUCenterTable CorpusSpec::Table() const {
  if (au_table == "bp4d") return geometry::AUCenterTable::Bp4d().Select(au_ids);
  if (au_table == "disfa") return geometry::AUCenterTable::Disfa().Select(au_ids);
  return geometry::AUCenterTable::Load(au_table).Select(au_ids);
}

std::vector<Implication> ParseImplications(const std::string& text, const std::vector<std::string>& au_ids) {
  std::vector<Implication> rules;
  for (const auto& item : SplitList(text)) {
    const auto gt = item.find('>');
    const auto colon = item.find(':');
    if (gt == std::string::npos || colon == std::string::npos || colon < gt) {
      throw ConfigError("implication `" + item + "` is not of the form a>b:p");
    }
    Implication rule;
    rule.from = LabelIndex(item.substr(0, gt), au_ids);
    rule.to = LabelIndex(item.substr(gt + 1, colon - gt - 1), au_ids);
    rule.probability = ParseDouble("au_implies", item.substr(colon + 1));
    rules.push_back(rule);
  }
  return rules;
}

std::string FormatImplications(const std::vector<Implication>& rules, const std::vector<std::string>& au_ids) {
  std::string s;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    s += (i ? "," : "") + au_ids.at(rules[i].from) + ">" + au_ids.at(rules[i].to) + ":" +
         FormatDouble(rules[i].probability);
  }
  return s;
}

CorpusSpec CorpusSpec::FromConfig(const KeyValueConfig& config) {
  CorpusSpec spec;
  std::string implies_text;
  for (const auto& [key, value] : config.values()) {
    if (key == "n_subjects") {
      spec.n_subjects = static_cast<int>(ParseInt(key, value));
    } else if (key == "frames_per_subject") {
      spec.frames_per_subject = static_cast<int>(ParseInt(key, value));
    } else if (key == "au_ids") {
      spec.au_ids = SplitList(value);
    } else if (key == "au_table") {
      spec.au_table = value;
    } else if (key == "base_rates") {
      spec.base_rates = ParseDoubleList(key, value);
    } else if (key == "amplitudes") {
      spec.amplitudes = ParseDoubleList(key, value);
    } else if (key == "au_implies") {
      implies_text = value;
    } else if (key == "identity_strength") {
      spec.identity_strength = ParseDouble(key, value);
    } else if (key == "landmark_jitter") {
      spec.landmark_jitter = ParseDouble(key, value);
    } else if (key == "noise_std") {
      spec.noise_std = ParseDouble(key, value);
    } else if (key == "pattern_sigma") {
      spec.pattern_sigma = ParseDouble(key, value);
    } else if (key == "image_side") {
      spec.image_side = static_cast<int>(ParseInt(key, value));
    } else if (key == "seed") {
      spec.seed = static_cast<std::uint64_t>(ParseInt(key, value));
    } else {
      throw ConfigError("unknown corpus key `" + key + "`");
    }
  }
  spec.implies = ParseImplications(implies_text, spec.au_ids);
  spec.Validate();
  return spec;
}

KeyValueConfig CorpusSpec::ToConfig() const {
  KeyValueConfig c;
  c.Set("n_subjects", std::to_string(n_subjects));
  c.Set("frames_per_subject", std::to_string(frames_per_subject));
  std::string ids;
  for (std::size_t i = 0; i < au_ids.size(); ++i) ids += (i ? "," : "") + au_ids[i];
  c.Set("au_ids", ids);
  c.Set("au_table", au_table);
  c.Set("base_rates", JoinDoubles(base_rates));
  c.Set("amplitudes", JoinDoubles(amplitudes));
  c.Set("au_implies", FormatImplications(implies, au_ids));
  c.Set("identity_strength", FormatDouble(identity_strength));
  c.Set("landmark_jitter", FormatDouble(landmark_jitter));
  c.Set("noise_std", FormatDouble(noise_std));
  c.Set("pattern_sigma", FormatDouble(pattern_sigma));
  c.Set("image_side", std::to_string(image_side));
  c.Set("seed", std::to_string(seed));
  return c;
}

data::Landmarks TemplateLandmarks(int side) {
  const double s = side / 224.0;
  data::Landmarks lm;
  for (int i = 0; i < data::kNumLandmarks; ++i) lm[i] = {kTemplate[i][0] * s, kTemplate[i][1] * s};
  return lm;
}

SubjectStyle MakeSubjectStyle(const CorpusSpec& spec, int subject) {
  Rng rng = MakeStream(spec.seed, "subject", static_cast<std::uint64_t>(subject));
  const double k = spec.identity_strength;
  SubjectStyle style;
  const double angle = 5.0 * std::numbers::pi / 180.0 * k * Symmetric(rng);
  const double scale = 1.0 + 0.08 * k * Symmetric(rng);
  style.affine = {scale * std::cos(angle), -scale * std::sin(angle), scale * std::sin(angle), scale * std::cos(angle)};
  const double max_shift = 8.0 * spec.image_side / 224.0;
  style.shift = {max_shift * k * Symmetric(rng), max_shift * k * Symmetric(rng)};
  for (double& t : style.tint) t = 30.0 * k * Symmetric(rng);
  style.bias.resize(spec.au_ids.size());
  for (double& b : style.bias) b = k * Symmetric(rng);
  return style;
}

std::vector<std::uint8_t> SampleLabels(const CorpusSpec& spec, Rng& rng) {
  std::vector<std::uint8_t> labels(spec.au_ids.size());
  for (int i = 0; i < spec.num_labels(); ++i) labels[i] = Bernoulli(rng, spec.BaseRate(i)) ? 1 : 0;
  for (const auto& rule : spec.implies) {
    // Draw unconditionally so the stream position does not depend on labels.
    const bool fire = Bernoulli(rng, rule.probability);
    if (labels[rule.from] && fire) labels[rule.to] = 1;
  }
  return labels;
}

data::Landmarks SubjectLandmarks(const CorpusSpec& spec, const SubjectStyle& style, Rng* jitter_rng) {
  const double c = spec.image_side / 2.0;
  double gx = 0.0;
  double gy = 0.0;
  if (jitter_rng != nullptr && spec.landmark_jitter > 0.0) {
    gx = spec.landmark_jitter * StandardNormal(*jitter_rng);
    gy = spec.landmark_jitter * StandardNormal(*jitter_rng);
  }
  data::Landmarks lm = TemplateLandmarks(spec.image_side);
  for (auto& p : lm) {
    const double x = p.x - c;
    const double y = p.y - c;
    p.x = c + style.affine[0] * x + style.affine[1] * y + style.shift[0] + gx;
    p.y = c + style.affine[2] * x + style.affine[3] * y + style.shift[1] + gy;
    if (jitter_rng != nullptr && spec.landmark_jitter > 0.0) {
      p.x += spec.landmark_jitter * StandardNormal(*jitter_rng);
      p.y += spec.landmark_jitter * StandardNormal(*jitter_rng);
    }
    p.x = std::clamp(p.x, 0.0, spec.image_side - 1.0);
    p.y = std::clamp(p.y, 0.0, spec.image_side - 1.0);
  }
  return lm;
}

data::Image RenderFrame(const CorpusSpec& spec, const SubjectStyle& style, const data::Landmarks& landmarks,
                        const std::vector<std::uint8_t>& labels, Rng* noise_rng) {
  const int side = spec.image_side;
  const double base[3] = {150.0 + style.tint[0], 120.0 + style.tint[1], 100.0 + style.tint[2]};
  std::vector<double> canvas(static_cast<std::size_t>(side) * side * 3);
  for (std::size_t i = 0; i < canvas.size(); ++i) canvas[i] = base[i % 3];

  const double dark[3] = {-1.0, -1.0, -1.0};
  const double feature_sigma = 1.5 * side / 224.0;
  for (const auto& p : landmarks) StampPattern(canvas, side, p.x, p.y, feature_sigma, 0.0, kFeatureDarkening / 1.4, dark);

  const geometry::AUCenterTable table = spec.Table();
  const auto centers = geometry::ComputeAUCenters(landmarks, table);
  const double sigma = spec.pattern_sigma * side / 224.0;
  for (int i = 0; i < spec.num_labels(); ++i) {
    const double strength = kPatternGain * spec.Amplitude(i) * (labels[i] + style.bias[i]);
    if (strength == 0.0) continue;
    const double theta = std::numbers::pi * i / spec.num_labels();
    const double* color = kPalette[i % kPaletteSize];
    for (int side_k = 0; side_k < 2; ++side_k) {
      const auto& p = centers[static_cast<std::size_t>(2 * i + side_k)];
      StampPattern(canvas, side, p.x, p.y, sigma, theta, strength, color);
    }
  }

  data::Image image;
  image.width = side;
  image.height = side;
  image.rgb.resize(canvas.size());
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    double v = canvas[i];
    if (noise_rng != nullptr && spec.noise_std > 0.0) v += spec.noise_std * StandardNormal(*noise_rng);
    image.rgb[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return image;
}

std::vector<GeneratedFrame> GenerateFrames(const CorpusSpec& spec) {
  spec.Validate();
  spec.Table();  // fail early on unknown AU ids
  std::vector<GeneratedFrame> out;
  out.reserve(static_cast<std::size_t>(spec.n_subjects) * spec.frames_per_subject);
  char name[64];
  for (int s = 0; s < spec.n_subjects; ++s) {
    const SubjectStyle style = MakeSubjectStyle(spec, s);
    Rng label_rng = MakeStream(spec.seed, "labels", static_cast<std::uint64_t>(s));
    std::snprintf(name, sizeof(name), "S%02d", s + 1);
    const std::string subject = name;
    for (int f = 0; f < spec.frames_per_subject; ++f) {
      Rng frame_rng =
          MakeStream(spec.seed, "frame", static_cast<std::uint64_t>(s) * spec.frames_per_subject + f);
      GeneratedFrame g;
      g.record.id = static_cast<int>(out.size());
      g.record.subject_id = subject;
      std::snprintf(name, sizeof(name), "images/%s_%04d.ppm", subject.c_str(), f);
      g.record.image_path = name;
      g.record.labels = SampleLabels(spec, label_rng);
      g.record.landmarks = SubjectLandmarks(spec, style, &frame_rng);
      g.image = RenderFrame(spec, style, g.record.landmarks, g.record.labels, &frame_rng);
      out.push_back(std::move(g));
    }
  }
  return out;
}

fs::path GenerateCorpus(const CorpusSpec& spec, const fs::path& out_dir) {
  const std::vector<GeneratedFrame> frames = GenerateFrames(spec);
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  const fs::path manifest = out_dir / "manifest.txt";
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest.string());
  out << "# image subject x0 y0 ... x48 y48 labels(";
  for (std::size_t i = 0; i < spec.au_ids.size(); ++i) out << (i ? " " : "") << "AU" << spec.au_ids[i];
  out << ")\n";
  for (const auto& g : frames) {
    data::WritePpm(out_dir / g.record.image_path, g.image);
    out << data::FormatManifestLine(g.record) << '\n';
  }
  out.close();
  if (!out) throw IoError("failed writing " + manifest.string());
  spec.ToConfig().Save(out_dir / "corpus.cfg");
  return manifest;
}

data::SubjectIndex IndexFrames(const std::vector<GeneratedFrame>& frames, int num_labels) {
  std::vector<data::Subject> subjects;
  std::map<std::string, std::size_t> slot;
  for (const auto& g : frames) {
    auto it = slot.find(g.record.subject_id);
    if (it == slot.end()) {
      it = slot.emplace(g.record.subject_id, subjects.size()).first;
      subjects.push_back({g.record.subject_id, {}, -1});
    }
    subjects[it->second].frames.push_back(g.record);
  }
  return data::SubjectIndex(std::move(subjects), num_labels);
}

double IdentityMixingScore(const std::vector<std::vector<double>>& embeddings,
                           const std::vector<std::string>& subject_ids) {
  const std::size_t m = embeddings.size();
  if (m != subject_ids.size()) throw DegenerateDataError("one subject id per embedding is required");
  std::map<std::string, int> counts;
  for (const auto& s : subject_ids) ++counts[s];
  if (counts.size() < 2) throw DegenerateDataError("identity mixing needs at least two subjects");
  for (const auto& [s, n] : counts) {
    if (n < 2) throw DegenerateDataError("subject " + s + " has fewer than two frames");
  }
  const std::size_t dim = embeddings[0].size();
  for (const auto& e : embeddings) {
    if (e.size() != dim || dim == 0) throw DegenerateDataError("embeddings must share a non-zero width");
  }
  double total = 0.0;
  std::vector<double> dist(m);
  for (std::size_t i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double t = embeddings[i][k] - embeddings[j][k];
        d += t * t;
      }
      dist[j] = d;
      best = std::min(best, d);
    }
    int ties = 0;
    int same = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i || dist[j] != best) continue;
      ++ties;
      same += subject_ids[j] == subject_ids[i] ? 1 : 0;
    }
    total += static_cast<double>(same) / ties;
  }
  return 1.0 - total / static_cast<double>(m);
}

}  // namespace marl::synth
