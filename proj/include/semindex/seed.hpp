// Copyright 2026 The Semindex Authors.
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

#ifndef SEMINDEX_SEED_HPP_
#define SEMINDEX_SEED_HPP_

#include <cstdint>
#include <initializer_list>

namespace semindex {

// splitmix64 finalizer; used to derive independent stream seeds from a run
// seed and a tuple of integers (phase, position, epoch, ...).
inline uint64_t MixSeed(uint64_t seed, std::initializer_list<uint64_t> parts) {
  uint64_t z = seed;
  for (uint64_t p : parts) {
    z += 0x9e3779b97f4a7c15ULL + p;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
  }
  return z;
}

}  // namespace semindex

#endif  // SEMINDEX_SEED_HPP_
