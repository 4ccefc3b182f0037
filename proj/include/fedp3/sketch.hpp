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

#include <cstdint>
#include <vector>

#include "fedp3/common.hpp"
#include "fedp3/rng.hpp"

namespace fedp3 {

// Compression operators used throughout the simulator. All three are stored
// as index sets plus a scale, never as dense d x d matrices; they are
// immutable after construction and safe to share across threads.

/// Biased diagonal pruning sketch: keeps a subset of coordinates, drops the
/// rest, no rescaling. Applying it twice equals applying it once.
struct PruningMask {
  Index dim = 0;
  std::vector<Index> kept;  // strictly increasing, each in [0, dim)

  /// Dense 0/1 diagonal, handy for masking weight matrices elementwise.
  Vector indicator() const {
    Vector ind = Vector::Zero(dim);
    for (Index j : kept) ind[j] = 1.0;
    return ind;
  }
};

/// One block of a shared random permutation, scaled by the client count so
/// that the client average of sketched vectors is unbiased.
struct PermSketch {
  Index dim = 0;
  int n_clients = 0;
  Index block_size = 0;
  int client_index = 0;
  std::vector<Index> owned;  // the coordinates this client's block selects

  double scale() const { return static_cast<double>(n_clients); }
};

/// Unbiased Rand-t comparator: keeps a uniform t-subset and rescales kept
/// coordinates by d/t. Variance factor omega = d/t - 1.
struct RandTSpec {
  Index dim = 0;
  Index kept_count = 0;

  double keep_prob() const {
    return static_cast<double>(kept_count) / static_cast<double>(dim);
  }
  double scale() const {
    return static_cast<double>(dim) / static_cast<double>(kept_count);
  }
  double variance_factor() const { return scale() - 1.0; }
};

/// Samples each coordinate independently with probability keep_ratio.
/// The kept set may be empty for small dims; callers must cope.
PruningMask sample_pruning_mask(Index dim, double keep_ratio, RngStream& rng);

/// Splits one uniformly random permutation of [0, d) into n blocks of size
/// d/n, one sketch per client. Requires d divisible by n.
std::vector<PermSketch> sample_perm_sketches(Index dim, int n_clients,
                                             RngStream& rng);

/// Deterministic variant used by exhaustive tests: builds the n sketches from
/// a caller-supplied permutation.
std::vector<PermSketch> perm_sketches_from(const std::vector<Index>& perm,
                                           int n_clients);

RandTSpec make_rand_t(Index dim, Index kept_count);

template <typename Derived>
Vector apply_mask(const PruningMask& mask,
                  const Eigen::MatrixBase<Derived>& v) {
  require_shape(v.size() == mask.dim,
                "apply_mask: vector length does not match mask dim");
  Vector out = Vector::Zero(mask.dim);
  for (Index j : mask.kept) out[j] = v[j];
  return out;
}

template <typename Derived>
Vector apply_perm_sketch(const PermSketch& sketch,
                         const Eigen::MatrixBase<Derived>& v) {
  require_shape(v.size() == sketch.dim,
                "apply_perm_sketch: vector length does not match sketch dim");
  Vector out = Vector::Zero(sketch.dim);
  const double s = sketch.scale();
  for (Index j : sketch.owned) out[j] = s * v[j];
  return out;
}

/// Keeps a uniformly random t-subset of coordinates scaled by d/t.
Vector rand_t_compress(const RandTSpec& spec, const Vector& v, RngStream& rng);

}  // namespace fedp3
