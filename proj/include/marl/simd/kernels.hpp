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

#include <cstddef>
#include <string_view>

namespace marl::simd {

// Dense double-precision inner loops. Every backend implements the same
// table; the scalar one is the reference the others are tested against.
//
// All matrices are row-major with explicit leading dimensions.
struct KernelTable {
  const char* name;

  // C[m,n] (+)= A[m,k] * B[k,n]. When accumulate is false C is overwritten.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t lda, const double* b, std::size_t ldb, double* c,
               std::size_t ldc, bool accumulate);

  double (*dot)(std::size_t n, const double* a, const double* b);

  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);

  void (*add)(std::size_t n, const double* a, const double* b, double* out);
  void (*mul)(std::size_t n, const double* a, const double* b, double* out);
  void (*scale)(std::size_t n, double alpha, const double* x, double* out);
  double (*sum)(std::size_t n, const double* x);
};

enum class Backend { kScalar, kAvx2, kNeon };

const KernelTable& ScalarKernels();

// Returns nullptr when the backend was not compiled in or the CPU lacks it.
const KernelTable* Avx2Kernels();
const KernelTable* NeonKernels();

// The table all tensor code goes through. Chosen on first use: the best
// backend the CPU supports, unless MARL_SIMD=scalar|avx2|neon overrides it.
const KernelTable& Active();

// Forces a backend. Returns false (and leaves the selection alone) when the
// requested backend is unavailable on this machine.
bool SetBackend(Backend backend);
bool SetBackend(std::string_view name);

}  // namespace marl::simd
