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

#include "fedp3/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace fedp3 {

void Partition::validate(Index dataset_size) const {
  std::vector<char> seen(static_cast<std::size_t>(dataset_size), 0);
  Index covered = 0;
  for (const auto& idx : client_indices) {
    for (Index j : idx) {
      require(j >= 0 && j < dataset_size, "partition: index out of range");
      require(!seen[static_cast<std::size_t>(j)],
              "partition: index assigned to two clients");
      seen[static_cast<std::size_t>(j)] = 1;
      ++covered;
    }
  }
  require(covered == dataset_size, "partition: some samples are unassigned");
}

Dataset gen_synthetic(Index n_samples, Index n_features, int n_classes,
                      double class_separation, RngStream& rng) {
  require(n_samples >= 1 && n_features >= 1 && n_classes >= 1,
          "gen_synthetic: sizes must be positive");
  require(class_separation >= 0.0,
          "gen_synthetic: separation must be nonnegative");

  // Unit-direction class means scaled by the separation.
  Matrix means(n_classes, n_features);
  for (int c = 0; c < n_classes; ++c) {
    Vector dir(n_features);
    for (Index f = 0; f < n_features; ++f) dir[f] = normal_draw(rng);
    const double norm = dir.norm();
    means.row(c) = class_separation * (dir / (norm == 0.0 ? 1.0 : norm));
  }

  // Balanced labels up to rounding, then shuffled sample order.
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(n_samples));
  const Index base = n_samples / n_classes;
  const Index extra = n_samples % n_classes;
  for (int c = 0; c < n_classes; ++c) {
    const Index count = base + (static_cast<Index>(c) < extra ? 1 : 0);
    labels.insert(labels.end(), static_cast<std::size_t>(count), c);
  }
  shuffle(labels, rng);

  Dataset ds;
  ds.num_classes = n_classes;
  ds.labels = std::move(labels);
  ds.features = Matrix(n_samples, n_features);
  for (Index i = 0; i < n_samples; ++i) {
    for (Index f = 0; f < n_features; ++f) {
      ds.features(i, f) =
          means(ds.labels[static_cast<std::size_t>(i)], f) + normal_draw(rng);
    }
  }
  return ds;
}

namespace {

std::vector<std::vector<Index>> class_pools(const Dataset& ds,
                                            RngStream& rng) {
  std::vector<std::vector<Index>> pools(
      static_cast<std::size_t>(ds.num_classes));
  for (Index i = 0; i < ds.size(); ++i) {
    pools[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])]
        .push_back(i);
  }
  for (auto& pool : pools) shuffle(pool, rng);
  return pools;
}

}  // namespace

Partition split_classwise(const Dataset& ds, int n_clients,
                          int classes_per_client, RngStream& rng) {
  const int c = ds.num_classes;
  const int k = classes_per_client;
  require(n_clients >= 1, "split_classwise: need at least one client");
  require(k >= 1 && k <= c,
          "split_classwise: classes_per_client must lie in [1, num_classes]");
  const long slots = static_cast<long>(n_clients) * k;
  require(slots >= c,
          "split_classwise: n * k < num_classes leaves classes unassigned");

  // Per-class quota: how many clients hold each class. Quotas sum to n*k.
  std::vector<int> quota(static_cast<std::size_t>(c),
                         static_cast<int>(slots / c));
  std::vector<int> order(static_cast<std::size_t>(c));
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  for (long r = 0; r < slots % c; ++r) {
    ++quota[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])];
  }

  // Deal each client k distinct classes, always drawing from the classes with
  // the highest remaining quota; this keeps the final quotas feasible.
  std::vector<std::vector<int>> held(static_cast<std::size_t>(n_clients));
  std::vector<std::vector<int>> takers(static_cast<std::size_t>(c));
  for (int i = 0; i < n_clients; ++i) {
    std::vector<int> classes(static_cast<std::size_t>(c));
    std::iota(classes.begin(), classes.end(), 0);
    shuffle(classes, rng);  // random tie-break
    std::stable_sort(classes.begin(), classes.end(), [&](int a, int b) {
      return quota[static_cast<std::size_t>(a)] >
             quota[static_cast<std::size_t>(b)];
    });
    for (int slot = 0; slot < k; ++slot) {
      const int cls = classes[static_cast<std::size_t>(slot)];
      require(quota[static_cast<std::size_t>(cls)] > 0,
              "split_classwise: class quotas exhausted; split is infeasible");
      --quota[static_cast<std::size_t>(cls)];
      held[static_cast<std::size_t>(i)].push_back(cls);
      takers[static_cast<std::size_t>(cls)].push_back(i);
    }
  }

  // Split every class pool evenly (+-1) across its takers.
  auto pools = class_pools(ds, rng);
  Partition parts;
  parts.client_indices.resize(static_cast<std::size_t>(n_clients));
  for (int cls = 0; cls < c; ++cls) {
    auto& pool = pools[static_cast<std::size_t>(cls)];
    auto& who = takers[static_cast<std::size_t>(cls)];
    require(!who.empty(), "split_classwise: class ended up with no takers");
    require(pool.size() >= who.size(),
            "split_classwise: not enough samples of class " +
                std::to_string(cls) + " for its clients");
    const std::size_t base = pool.size() / who.size();
    const std::size_t extra = pool.size() % who.size();
    std::size_t cursor = 0;
    for (std::size_t t = 0; t < who.size(); ++t) {
      const std::size_t take = base + (t < extra ? 1 : 0);
      auto& dst =
          parts.client_indices[static_cast<std::size_t>(who[t])];
      dst.insert(dst.end(), pool.begin() + static_cast<std::ptrdiff_t>(cursor),
                 pool.begin() + static_cast<std::ptrdiff_t>(cursor + take));
      cursor += take;
    }
  }
  parts.validate(ds.size());
  return parts;
}

Partition split_dirichlet(const Dataset& ds, int n_clients, double alpha,
                          RngStream& rng) {
  require(n_clients >= 1, "split_dirichlet: need at least one client");
  require(alpha > 0.0, "split_dirichlet: alpha must be positive");
  const int c = ds.num_classes;

  // Per-client class preferences ~ Dirichlet(alpha * 1_C).
  Matrix prefs(n_clients, c);
  for (int i = 0; i < n_clients; ++i) {
    double total = 0.0;
    for (int j = 0; j < c; ++j) {
      prefs(i, j) = gamma_draw(rng, alpha);
      total += prefs(i, j);
    }
    prefs.row(i) /= total;
  }

  auto pools = class_pools(ds, rng);
  Index remaining = ds.size();
  Partition parts;
  parts.client_indices.resize(static_cast<std::size_t>(n_clients));
  std::vector<int> order(static_cast<std::size_t>(n_clients));
  std::iota(order.begin(), order.end(), 0);

  // Deal one sample per client per pass; preferences are renormalized over
  // the classes whose pools are still nonempty.
  while (remaining > 0) {
    shuffle(order, rng);
    for (int i : order) {
      if (remaining == 0) break;
      double mass = 0.0;
      for (int j = 0; j < c; ++j) {
        if (!pools[static_cast<std::size_t>(j)].empty()) mass += prefs(i, j);
      }
      int chosen = -1;
      if (mass <= 0.0) {
        for (int j = 0; j < c; ++j) {
          if (!pools[static_cast<std::size_t>(j)].empty()) {
            chosen = j;
            break;
          }
        }
      } else {
        double u = uniform_real(rng) * mass;
        for (int j = 0; j < c; ++j) {
          if (pools[static_cast<std::size_t>(j)].empty()) continue;
          u -= prefs(i, j);
          chosen = j;
          if (u <= 0.0) break;
        }
      }
      auto& pool = pools[static_cast<std::size_t>(chosen)];
      parts.client_indices[static_cast<std::size_t>(i)].push_back(pool.back());
      pool.pop_back();
      --remaining;
    }
  }
  parts.validate(ds.size());
  return parts;
}

std::pair<Partition, Partition> split_train_test(const Partition& parts,
                                                 double train_fraction,
                                                 RngStream& rng) {
  require(train_fraction > 0.0 && train_fraction <= 1.0,
          "split_train_test: fraction must lie in (0, 1]");
  Partition train, test;
  train.client_indices.resize(parts.client_indices.size());
  test.client_indices.resize(parts.client_indices.size());
  for (std::size_t i = 0; i < parts.client_indices.size(); ++i) {
    std::vector<Index> idx = parts.client_indices[i];
    shuffle(idx, rng);
    const std::size_t cut = static_cast<std::size_t>(
        train_fraction * static_cast<double>(idx.size()) + 0.5);
    train.client_indices[i].assign(idx.begin(),
                                   idx.begin() + static_cast<std::ptrdiff_t>(
                                                     std::min(cut, idx.size())));
    test.client_indices[i].assign(
        idx.begin() + static_cast<std::ptrdiff_t>(std::min(cut, idx.size())),
        idx.end());
  }
  return {std::move(train), std::move(test)};
}

Batch gather(const Dataset& ds, const std::vector<Index>& indices) {
  Batch batch;
  batch.features = Matrix(static_cast<Index>(indices.size()),
                          ds.feature_dim());
  batch.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] >= 0 && indices[r] < ds.size(),
            "gather: index out of range");
    batch.features.row(static_cast<Index>(r)) = ds.features.row(indices[r]);
    batch.labels.push_back(ds.labels[static_cast<std::size_t>(indices[r])]);
  }
  return batch;
}

void write_partition_csv(const Partition& parts, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "write_partition_csv: cannot open " + path);
  out << "client_id,sample_index\n";
  for (std::size_t i = 0; i < parts.client_indices.size(); ++i) {
    for (Index j : parts.client_indices[i]) {
      out << i << "," << j << "\n";
    }
  }
  require(out.good(), "write_partition_csv: write failed");
}

}  // namespace fedp3
