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

#include <string>
#include <utility>
#include <vector>

#include "fedp3/common.hpp"
#include "fedp3/objective.hpp"
#include "fedp3/rng.hpp"

namespace fedp3 {

struct Dataset {
  Matrix features;          // N x F
  std::vector<int> labels;  // values in [0, num_classes)
  int num_classes = 0;

  Index size() const { return features.rows(); }
  Index feature_dim() const { return features.cols(); }
};

/// Disjoint per-client index lists covering the parent dataset exactly once.
struct Partition {
  std::vector<std::vector<Index>> client_indices;

  int n_clients() const { return static_cast<int>(client_indices.size()); }

  /// Asserts disjointness and exact coverage of [0, dataset_size).
  void validate(Index dataset_size) const;
};

/// Class-conditional Gaussians: per-class unit-direction means scaled by
/// class_separation, unit covariance, balanced classes up to rounding.
Dataset gen_synthetic(Index n_samples, Index n_features, int n_classes,
                      double class_separation, RngStream& rng);

/// Fixed classes per client, k distinct classes each, uniform data volume per
/// class across the clients that hold it. Requires n * k >= C so that every
/// class has at least one taker.
Partition split_classwise(const Dataset& ds, int n_clients,
                          int classes_per_client, RngStream& rng);

/// Dirichlet(alpha) class preferences per client; samples are dealt one at a
/// time in shuffled client order, resampling a class when its pool is empty,
/// until every data point is allocated.
Partition split_dirichlet(const Dataset& ds, int n_clients, double alpha,
                          RngStream& rng);

/// Splits each client's indices into train/test by the given train fraction.
std::pair<Partition, Partition> split_train_test(const Partition& parts,
                                                 double train_fraction,
                                                 RngStream& rng);

/// Materializes the rows of `indices` as a batch.
Batch gather(const Dataset& ds, const std::vector<Index>& indices);

/// CSV export, header "client_id,sample_index".
void write_partition_csv(const Partition& parts, const std::string& path);

}  // namespace fedp3
