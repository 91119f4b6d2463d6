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

#include <atomic>
#include <cstdlib>
#include <string>

#include "marl/simd/kernels.hpp"

namespace marl::simd {

const KernelTable* Avx2KernelsUnchecked();

namespace {

bool CpuHasAvx2() {
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* Lookup(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return &ScalarKernels();
    case Backend::kAvx2:
      return Avx2Kernels();
    case Backend::kNeon:
      return NeonKernels();
  }
  return nullptr;
}

const KernelTable* Detect() {
  if (const char* env = std::getenv("MARL_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return &ScalarKernels();
    if (want == "avx2" && Avx2Kernels()) return Avx2Kernels();
    if (want == "neon" && NeonKernels()) return NeonKernels();
  }
  if (const KernelTable* t = Avx2Kernels()) return t;
  if (const KernelTable* t = NeonKernels()) return t;
  return &ScalarKernels();
}

std::atomic<const KernelTable*>& Slot() {
  static std::atomic<const KernelTable*> slot{Detect()};
  return slot;
}

}  // namespace

const KernelTable* Avx2Kernels() {
  static const bool supported = CpuHasAvx2();
  return supported ? Avx2KernelsUnchecked() : nullptr;
}

const KernelTable& Active() { return *Slot().load(std::memory_order_relaxed); }

bool SetBackend(Backend backend) {
  const KernelTable* t = Lookup(backend);
  if (t == nullptr) return false;
  Slot().store(t, std::memory_order_relaxed);
  return true;
}

bool SetBackend(std::string_view name) {
  if (name == "scalar") return SetBackend(Backend::kScalar);
  if (name == "avx2") return SetBackend(Backend::kAvx2);
  if (name == "neon") return SetBackend(Backend::kNeon);
  return false;
}

}  // namespace marl::simd
