// Copyright 2026 The pcpoison Authors
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

#ifndef PCPOISON_PARALLEL_HPP_
#define PCPOISON_PARALLEL_HPP_

#include <cstddef>
#include <functional>

namespace pcpoison {

// Samples per reduction block in batched gradient sums.
inline constexpr std::size_t kReduceBlock = 8;

// Worker count: PCPOISON_THREADS when set to a positive integer, otherwise
// the hardware concurrency.
int thread_count();

// Runs fn(0..n-1), possibly concurrently. fn must only write state owned by
// its index. Exceptions are rethrown (the lowest failing index wins).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pcpoison

#endif  // PCPOISON_PARALLEL_HPP_
