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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedp3/common.hpp"
#include "fedp3/data.hpp"
#include "fedp3/objective.hpp"
#include "fedp3/rng.hpp"
#include "fedp3/sketch.hpp"

namespace fedp3 {

// The practical federated loop: the server assigns each client a layer
// subset plus pruning mechanisms, ships pruned weights, clients run local
// steps under one of three local-pruning strategies, and upload only the
// layers they own.

enum class LocalStrategy { kFixed, kUniform, kOrderedDropout };
enum class AggregationMode { kSimple, kWeighted, kAttention };

LocalStrategy parse_local_strategy(const std::string& name);
AggregationMode parse_aggregation_mode(const std::string& name);
std::string to_string(LocalStrategy s);
std::string to_string(AggregationMode m);

/// Layer-assignment scheme: how many uniformly chosen non-final layers each
/// client trains (every client always trains the final layer).
struct PlanScheme {
  enum class Kind { kFull, kLowerB, kOpu2, kOpu3, kOpuRange };
  Kind kind = Kind::kFull;
  int range_min = 0;  // used by kOpuRange only
  int range_max = 0;

  static PlanScheme parse(const std::string& text);
  std::string to_string() const;
};

struct ClientPlan {
  int client_id = 0;
  std::vector<std::string> layers;  // trainable set L_i; includes the final
  double keep_ratio = 1.0;          // global pruning keep-ratio p_i
  LocalStrategy strategy = LocalStrategy::kFixed;
  int local_steps = 10;
  double learning_rate = 0.05;
  double uniform_q_lo = 0.7;  // lower end of the uniform strategy's ratio
};

/// Server -> client payload: trainable layers verbatim, every other layer
/// masked (and the mask recorded so the client keeps dropped weights at 0).
/// Mask coordinates index the layer's column-major flattening.
struct DispatchPayload {
  LayeredModel model;
  std::map<std::string, PruningMask> masks;  // exactly the non-plan layers
};

/// Client -> server payload; carries nothing outside the plan's layer set.
struct UploadPayload {
  int client_id = 0;
  std::map<std::string, Matrix> layers;
};

struct RoundMetrics {
  int round = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  std::uint64_t up_scalars_cum = 0;
  std::uint64_t down_scalars_cum = 0;
  std::string tag;
};

std::vector<ClientPlan> make_plans(const LayeredModel& model, int n_clients,
                                   const PlanScheme& scheme, double keep_ratio,
                                   LocalStrategy strategy, int local_steps,
                                   double learning_rate, double uniform_q_lo,
                                   RngStream& rng);

DispatchPayload dispatch(const LayeredModel& server_model,
                         const ClientPlan& plan, RngStream& rng);

/// Scalars the server actually ships: full trainable layers plus the kept
/// coordinates of every masked layer.
std::uint64_t dispatch_scalar_count(const DispatchPayload& payload,
                                    const ClientPlan& plan);

std::uint64_t upload_scalar_count(const UploadPayload& upload);

/// K local SGD steps on the composed local model. Per step the strategy
/// produces a ratio q and, for the non-trainable layers, an activity mask:
///   fixed            q == 1, no extra masking;
///   uniform          fresh iid mask with q drawn uniformly from [q_lo, 1];
///   ordered_dropout  leading ceil(q*rows) x ceil(q*cols) block.
/// Coordinates dropped by the dispatch mask stay zero throughout; only the
/// plan's layers are returned.
UploadPayload local_update(const DispatchPayload& payload,
                           const ClientPlan& plan, const Batch& shard,
                           int batch_size, RngStream& rng);

/// Same local run, returning the whole composed local model instead of just
/// the uploadable layers (the upload is its plan-restricted view).
LayeredModel local_train(const DispatchPayload& payload,
                         const ClientPlan& plan, const Batch& shard,
                         int batch_size, RngStream& rng);

/// Rows/cols kept by ordered dropout at ratio q: ceil(q * rows) by
/// ceil(q * cols), the leading block.
std::pair<Index, Index> ordered_dropout_keep_counts(Index rows, Index cols,
                                                    double q);

/// Per-layer combination of the uploads that contain that layer. Layers
/// nobody uploaded keep the previous round's weights.
LayeredModel aggregate(const std::vector<UploadPayload>& uploads,
                       const std::vector<ClientPlan>& plans,
                       const LayeredModel& prev_model, AggregationMode mode,
                       double attention_tau = 4.0);

/// Draws batch_size distinct indices from [0, shard_size); returns the whole
/// shard (consuming no randomness) when batch_size >= shard_size. Shared with
/// the centralized-SGD oracle so trajectories can be compared exactly.
std::vector<Index> sample_batch_indices(Index shard_size, int batch_size,
                                        RngStream& rng);

struct FedRunConfig {
  LayeredModel init_model;
  const Dataset* data = nullptr;
  Partition train_parts;
  Partition test_parts;
  std::vector<ClientPlan> plans;
  int rounds = 200;
  double participation = 1.0;
  AggregationMode aggregation = AggregationMode::kSimple;
  double attention_tau = 4.0;
  int batch_size = 48;
  std::uint64_t seed = 0;
  int threads = 1;
  int metrics_every = 1;  // loss/accuracy cadence; counters stay exact
  std::string tag;
};

/// T rounds of sample -> dispatch -> local update -> aggregate. Per-client
/// streams are derived from (seed, round, client) so any thread count
/// reproduces the sequential run exactly. final_model, when non-null,
/// receives the aggregated model after the last round.
std::vector<RoundMetrics> run_fedp3(const FedRunConfig& config,
                                    LayeredModel* final_model = nullptr);

}  // namespace fedp3
