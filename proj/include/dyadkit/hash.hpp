// Copyright 2026 The Dyadkit Authors
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

#ifndef DYADKIT_HASH_HPP_
#define DYADKIT_HASH_HPP_

#include <cstdint>
#include <string>
#include <string_view>

namespace dyad {

/// FNV-1a over the bytes of `data`. Stable across platforms and runs.
constexpr std::uint64_t fnv1a64(std::string_view data,
                                std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// splitmix64 finalizer; spreads FNV output over all 64 bits.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t stable_hash64(std::string_view data) {
  return mix64(fnv1a64(data));
}

/// Maps a key to [0, 1) using the top 53 bits of its stable hash.
constexpr double unit_interval_hash(std::string_view data) {
  return static_cast<double>(stable_hash64(data) >> 11) * 0x1.0p-53;
}

/// Incremental content hash used for stage stamps.
class ContentHasher {
 public:
  void update(std::string_view data) {
    a_ = fnv1a64(data, a_);
    b_ = fnv1a64(data, b_ ^ mix64(data.size()));
    // Field separator so ("ab","c") and ("a","bc") differ.
    a_ = fnv1a64(std::string_view("\x1f", 1), a_);
    b_ = fnv1a64(std::string_view("\x1f", 1), b_);
  }
  std::string hex() const;

 private:
  std::uint64_t a_ = 0xcbf29ce484222325ULL;
  std::uint64_t b_ = 0x84222325cbf29ce4ULL;
};

}  // namespace dyad

#endif  // DYADKIT_HASH_HPP_
