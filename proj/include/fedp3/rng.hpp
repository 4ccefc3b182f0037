// Copyright 2026 The fedp3-sim Authors
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

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace fedp3 {

// All randomness flows through explicitly seeded streams. Sub-streams are
// derived by hashing (master, a, b, c) so per-client/per-round work can run
// concurrently and still reproduce the sequential results bit for bit.
using RngStream = std::mt19937_64;

// Fixed tags keeping independent sub-streams from colliding. run_ist and
// run_ldp_fedp3 share kPermutation on purpose: with zero noise and full
// batches the two algorithms must draw identical sketches.
namespace stream_tag {
inline constexpr std::uint64_t kPermutation = 1;
inline constexpr std::uint64_t kPruningMask = 2;
inline constexpr std::uint64_t kLocalUpdate = 3;
inline constexpr std::uint64_t kNoise = 4;
inline constexpr std::uint64_t kParticipation = 5;
inline constexpr std::uint64_t kMinibatch = 6;
inline constexpr std::uint64_t kInit = 7;
inline constexpr std::uint64_t kData = 8;
inline constexpr std::uint64_t kPlans = 9;
}  // namespace stream_tag

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline RngStream derive_stream(std::uint64_t master, std::uint64_t a = 0,
                               std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = splitmix64(master);
  s = splitmix64(s ^ splitmix64(a));
  s = splitmix64(s ^ splitmix64(b));
  s = splitmix64(s ^ splitmix64(c));
  return RngStream(s);
}

/// Uniform integer in [0, n), n >= 1. Rejection sampling keeps the draw
/// unbiased and independent of the standard library's distribution details.
inline std::uint64_t uniform_index(RngStream& rng, std::uint64_t n) {
  const std::uint64_t limit = n == 0 ? 0 : UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return v % n;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_real(RngStream& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_real(RngStream& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_real(rng);
}

/// Standard normal via Box-Muller; stateless so interleaved draws from
/// different call sites stay reproducible.
inline double normal_draw(RngStream& rng) {
  double u1 = uniform_real(rng);
  while (u1 <= 0.0) u1 = uniform_real(rng);
  const double u2 = uniform_real(rng);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

/// Gamma(shape, 1) by Marsaglia-Tsang, boosted for shape < 1.
inline double gamma_draw(RngStream& rng, double shape) {
  if (shape < 1.0) {
    const double u = uniform_real(rng);
    return gamma_draw(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal_draw(rng);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = uniform_real(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(std::vector<T>& values, RngStream& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(values[i - 1], values[j]);
  }
}

/// k distinct indices drawn uniformly from [0, n), in draw order.
inline std::vector<std::int64_t> sample_distinct(std::int64_t n,
                                                 std::int64_t k,
                                                 RngStream& rng) {
  std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    const std::uint64_t j =
        uniform_index(rng, static_cast<std::uint64_t>(n - i));
    out.push_back(pool[static_cast<std::size_t>(j)]);
    std::swap(pool[static_cast<std::size_t>(j)],
              pool[static_cast<std::size_t>(n - i - 1)]);
  }
  return out;
}

/// Uniformly random permutation of [0, n).
inline std::vector<std::int64_t> random_permutation(std::int64_t n,
                                                    RngStream& rng) {
  return sample_distinct(n, n, rng);
}

}  // namespace fedp3
