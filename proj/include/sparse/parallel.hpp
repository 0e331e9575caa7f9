// Copyright 2026 The Sparse Sampler Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>

namespace sparse {

/// Caps the worker count used by pixel loops. 0 restores the default.
void set_thread_limit(int threads);

/// Applies SPARSE_SAMPLER_THREADS if it is set (0 = auto).
void configure_threads_from_env();

int thread_limit();

/// Runs body(i) for i in [0, count). Iterations must write disjoint outputs;
/// results never depend on the thread count.
template <typename Body>
void parallel_for(std::ptrdiff_t count, Body&& body) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) body(i);
#else
  for (std::ptrdiff_t i = 0; i < count; ++i) body(i);
#endif
}

}  // namespace sparse
