// Copyright 2026 The ITIS Engine Authors. All Rights Reserved.
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

#ifndef ITIS_RNG_HPP
#define ITIS_RNG_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>

namespace itis {

/// Seeded random source passed explicitly to every sampler.
///
/// Draws are built directly on mt19937_64 output instead of the standard
/// distribution classes, whose algorithms differ between standard libraries;
/// this keeps traces identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [lo, hi] (inclusive).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo);
    if (span == UINT64_MAX) return static_cast<std::int64_t>(engine_());
    const std::uint64_t n = span + 1;
    // Reject the biased top slice.
    const std::uint64_t bucket = (UINT64_MAX / n) * n;
    std::uint64_t r = engine_();
    while (r >= bucket) r = engine_();
    return lo + static_cast<std::int64_t>(r % n);
  }

  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    return static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(n) - 1));
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform_real(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

/// FNV-1a, 64 bit. Stable across platforms and runs.
constexpr std::uint64_t stable_hash(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Per-instance seed: master seed XOR the instance hash.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view instance_id) noexcept {
  return master ^ stable_hash(instance_id);
}

}  // namespace itis

#endif  // ITIS_RNG_HPP
