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

#include "fedp3/sketch.hpp"

#include <string>

namespace fedp3 {

PruningMask sample_pruning_mask(Index dim, double keep_ratio,
                                RngStream& rng) {
  require(dim >= 1, "sample_pruning_mask: dim must be positive");
  require(keep_ratio > 0.0 && keep_ratio <= 1.0,
          "sample_pruning_mask: keep_ratio must lie in (0, 1]");
  PruningMask mask;
  mask.dim = dim;
  mask.kept.reserve(static_cast<std::size_t>(dim));
  for (Index j = 0; j < dim; ++j) {
    if (uniform_real(rng) < keep_ratio) mask.kept.push_back(j);
  }
  return mask;
}

std::vector<PermSketch> perm_sketches_from(const std::vector<Index>& perm,
                                           int n_clients) {
  const Index dim = static_cast<Index>(perm.size());
  require(n_clients >= 1, "perm_sketches_from: need at least one client");
  require(dim % n_clients == 0,
          "perm_sketches_from: dim " + std::to_string(dim) +
              " is not divisible by n = " + std::to_string(n_clients) +
              "; zero-pad the vector to a multiple of n first");
  const Index block = dim / n_clients;
  std::vector<PermSketch> sketches(static_cast<std::size_t>(n_clients));
  for (int i = 0; i < n_clients; ++i) {
    PermSketch& s = sketches[static_cast<std::size_t>(i)];
    s.dim = dim;
    s.n_clients = n_clients;
    s.block_size = block;
    s.client_index = i;
    s.owned.assign(perm.begin() + static_cast<std::ptrdiff_t>(i) * block,
                   perm.begin() + static_cast<std::ptrdiff_t>(i + 1) * block);
  }
  return sketches;
}

std::vector<PermSketch> sample_perm_sketches(Index dim, int n_clients,
                                             RngStream& rng) {
  require(dim >= 1, "sample_perm_sketches: dim must be positive");
  require(n_clients >= 1, "sample_perm_sketches: need at least one client");
  require(dim % n_clients == 0,
          "sample_perm_sketches: dim " + std::to_string(dim) +
              " is not divisible by n = " + std::to_string(n_clients) +
              "; zero-pad the vector to a multiple of n first");
  const std::vector<std::int64_t> perm = random_permutation(dim, rng);
  return perm_sketches_from(std::vector<Index>(perm.begin(), perm.end()),
                            n_clients);
}

RandTSpec make_rand_t(Index dim, Index kept_count) {
  require(dim >= 1, "make_rand_t: dim must be positive");
  require(kept_count >= 1 && kept_count <= dim,
          "make_rand_t: kept_count must lie in [1, dim]");
  return RandTSpec{dim, kept_count};
}

Vector rand_t_compress(const RandTSpec& spec, const Vector& v,
                       RngStream& rng) {
  require(spec.kept_count >= 1 && spec.kept_count <= spec.dim,
          "rand_t_compress: kept_count must lie in [1, dim]");
  require_shape(v.size() == spec.dim,
                "rand_t_compress: vector length does not match spec dim");
  Vector out = Vector::Zero(spec.dim);
  const double s = spec.scale();
  for (std::int64_t j : sample_distinct(spec.dim, spec.kept_count, rng)) {
    out[j] = s * v[j];
  }
  return out;
}

}  // namespace fedp3
