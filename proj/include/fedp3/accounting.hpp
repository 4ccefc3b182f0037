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
#include <string>
#include <vector>

#include "fedp3/common.hpp"
#include "fedp3/objective.hpp"

namespace fedp3 {

enum class LayerKind { kConv, kFc, kPool };

struct LayerDesc {
  std::string name;
  LayerKind kind = LayerKind::kFc;
  std::string shape;  // human-readable, e.g. "1600x1024"
  std::uint64_t param_count = 0;
};

/// Static architecture description used for parameter and communication
/// bookkeeping. The last descriptor is the final output layer.
struct ArchSpec {
  std::string name;
  std::vector<LayerDesc> layers;

  const LayerDesc& final_layer() const { return layers.back(); }
  const LayerDesc* find(const std::string& layer_name) const;
  std::uint64_t total_params() const;
  /// Names of layers that carry parameters (pools excluded), in order.
  std::vector<std::string> trainable_layers() const;

  /// Presets: cifar_cnn, cifar100_cnn, fashion_cnn, emnistl_mlp, desk_mlp.
  /// Conv rows store the printed counts (which include biases); fc rows are
  /// plain in*out products.
  static ArchSpec preset(const std::string& preset_name);
  static ArchSpec from_model(const LayeredModel& model,
                             const std::string& arch_name = "model");
};

std::map<std::string, std::uint64_t> param_counts(const ArchSpec& arch);

/// Expected deployed parameter count when the layers in `trained` ship in
/// full and all others are pruned at the given keep ratio. `trained` must
/// include the final layer.
double deployed_size(const ArchSpec& arch,
                     const std::vector<std::string>& trained,
                     double keep_ratio);

/// Scalars a client uploads per round when it trains exactly `trained`.
std::uint64_t upload_cost(const ArchSpec& arch,
                          const std::vector<std::string>& trained);

/// (largest - smallest) / smallest. Throws when the smallest cost is zero.
double relative_spread(const std::vector<double>& costs);

/// Exact rational, e.g. 4/5 for opu3 on a five-trainable-layer network.
struct Fraction {
  std::uint64_t num = 0;
  std::uint64_t den = 1;
  double value() const {
    return static_cast<double>(num) / static_cast<double>(den);
  }
};

/// Layer-count fraction of the full model a scheme uploads: each client
/// trains `chosen` uniformly picked non-final layers plus the final layer, so
/// the expected upload is (chosen + 1) / (#trainable layers) of the full
/// upload when layers are counted (the convention behind the reported
/// 20/40/60% reductions). For ranged schemes the chosen count is the mean of
/// the range.
Fraction scheme_upload_fraction(const ArchSpec& arch, int chosen_layers);
Fraction opu_range_upload_fraction(const ArchSpec& arch, int min_layers,
                                   int max_layers);

/// Single-extra-layer analysis: one variant per non-final trainable layer,
/// each training that layer plus the final one.
struct SingleLayerVariant {
  std::string layer;
  double deployed = 0.0;        // deployed size at the report's keep ratio
  std::uint64_t upload = 0;     // per-round upload cost
};

struct SingleLayerReport {
  double keep_ratio = 0.0;
  std::vector<SingleLayerVariant> variants;
  double deployed_spread = 0.0;  // (largest - smallest)/smallest over deployed
  double upload_spread = 0.0;    // same over upload costs
};

SingleLayerReport single_layer_report(const ArchSpec& arch, double keep_ratio);

}  // namespace fedp3
