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

#include "marl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "marl/errors.hpp"
#include "marl/log.hpp"

namespace marl {
namespace {

constexpr const char* kMagic = "MARL-CKPT";
constexpr int kVersion = 1;

std::uint64_t Fnv1a(const unsigned char* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string Hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void CheckToken(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
    throw LoadError(std::string("checkpoint ") + what + " must be a non-empty token without whitespace: `" + s + "`");
  }
}

std::vector<unsigned char> EncodePayload(const std::vector<NamedTensor>& tensors) {
  std::size_t total = 0;
  for (const auto& t : tensors) total += t.tensor.size();
  std::vector<unsigned char> bytes(total * sizeof(double));
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    for (double v : t.tensor.data) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) bytes[offset++] = static_cast<unsigned char>(bits >> (8 * b));
    }
  }
  return bytes;
}

}  // namespace

const Tensor* Checkpoint::Find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

std::string Fingerprint(std::string_view canonical) {
  return Hex(Fnv1a(reinterpret_cast<const unsigned char*>(canonical.data()), canonical.size()));
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  CheckToken(checkpoint.fingerprint, "fingerprint");
  std::ostringstream header;
  header << kMagic << ' ' << kVersion << '\n';
  header << "fingerprint " << checkpoint.fingerprint << '\n';
  for (const auto& [k, v] : checkpoint.meta) {
    CheckToken(k, "meta key");
    if (v.find('\n') != std::string::npos) throw LoadError("checkpoint meta values must be single-line");
    header << "meta " << k << ' ' << v << '\n';
  }
  for (const auto& t : checkpoint.tensors) {
    CheckToken(t.name, "tensor name");
    header << "tensor " << t.name << " f64 " << t.tensor.shape.size();
    for (int d : t.tensor.shape) header << ' ' << d;
    header << '\n';
  }
  const std::vector<unsigned char> payload = EncodePayload(checkpoint.tensors);
  header << "payload " << payload.size() << ' ' << Hex(Fnv1a(payload.data(), payload.size())) << '\n';

  // Write-then-rename so an interrupted save never leaves a torn archive.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  const std::string where = path.string() + ": ";
  auto fail = [&](const std::string& why) -> LoadError { return LoadError(where + why); };

  std::string line;
  if (!std::getline(in, line)) throw fail("empty file");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != kMagic) throw fail("not a checkpoint archive");
    if (version != kVersion) throw fail("unsupported archive version " + std::to_string(version));
  }
  Checkpoint ckpt;
  std::size_t payload_bytes = 0;
  std::string payload_hash;
  bool have_payload = false;
  while (!have_payload && std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "fingerprint") {
      ls >> ckpt.fingerprint;
    } else if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (kind == "tensor") {
      NamedTensor t;
      std::string dtype;
      std::size_t rank = 0;
      if (!(ls >> t.name >> dtype >> rank)) throw fail("malformed tensor entry");
      if (dtype != "f64") throw fail("unsupported dtype `" + dtype + "` for " + t.name);
      if (rank > 8) throw fail("implausible rank for " + t.name);
      t.tensor.shape.resize(rank);
      for (auto& d : t.tensor.shape) {
        if (!(ls >> d) || d < 0) throw fail("malformed shape for " + t.name);
      }
      ckpt.tensors.push_back(std::move(t));
    } else if (kind == "payload") {
      if (!(ls >> payload_bytes >> payload_hash)) throw fail("malformed payload entry");
      have_payload = true;
    } else {
      throw fail("unexpected header line `" + line + "`");
    }
  }
  if (!have_payload) throw fail("missing payload");
  std::size_t expected = 0;
  for (const auto& t : ckpt.tensors) expected += NumElements(t.tensor.shape) * sizeof(double);
  if (expected != payload_bytes) throw fail("payload size does not match the tensor manifest");

  std::vector<unsigned char> bytes(payload_bytes);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw fail("truncated payload");
  if (in.peek() != std::char_traits<char>::eof()) throw fail("trailing bytes after payload");
  if (Hex(Fnv1a(bytes.data(), bytes.size())) != payload_hash) throw fail("payload checksum mismatch");

  std::size_t offset = 0;
  for (auto& t : ckpt.tensors) {
    t.tensor.data.resize(NumElements(t.tensor.shape));
    for (double& v : t.tensor.data) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[offset++]) << (8 * b);
      v = std::bit_cast<double>(bits);
    }
  }
  return ckpt;
}

void RequireFingerprint(const Checkpoint& checkpoint, const std::string& expected, bool force,
                        const std::filesystem::path& path) {
  if (checkpoint.fingerprint == expected) return;
  const std::string msg = path.string() + ": config fingerprint " + checkpoint.fingerprint +
                          " does not match the current configuration (" + expected + ")";
  if (!force) throw LoadError(msg + "; pass --force to load anyway");
  LogWarn(msg + "; loading anyway (--force)");
}

}  // namespace marl
