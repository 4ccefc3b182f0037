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

#include "fedp3/accounting.hpp"

#include <algorithm>
#include <set>

namespace fedp3 {

namespace {

LayerDesc conv(const std::string& name, const std::string& shape,
               std::uint64_t params) {
  return LayerDesc{name, LayerKind::kConv, shape, params};
}
LayerDesc pool(const std::string& name, const std::string& shape) {
  return LayerDesc{name, LayerKind::kPool, shape, 0};
}
LayerDesc fc(const std::string& name, std::uint64_t in, std::uint64_t out) {
  return LayerDesc{name, LayerKind::kFc,
                   std::to_string(in) + "x" + std::to_string(out), in * out};
}

}  // namespace

const LayerDesc* ArchSpec::find(const std::string& layer_name) const {
  for (const LayerDesc& l : layers)
    if (l.name == layer_name) return &l;
  return nullptr;
}

std::uint64_t ArchSpec::total_params() const {
  std::uint64_t total = 0;
  for (const LayerDesc& l : layers) total += l.param_count;
  return total;
}

std::vector<std::string> ArchSpec::trainable_layers() const {
  std::vector<std::string> out;
  for (const LayerDesc& l : layers)
    if (l.param_count > 0) out.push_back(l.name);
  return out;
}

ArchSpec ArchSpec::preset(const std::string& preset_name) {
  ArchSpec arch;
  arch.name = preset_name;
  if (preset_name == "cifar_cnn" || preset_name == "cifar100_cnn" ||
      preset_name == "fashion_cnn") {
    // Two conv + pool stages followed by three fc layers. Conv counts carry
    // the bias terms of the printed architecture; fc counts do not.
    const bool one_channel = preset_name == "fashion_cnn";
    const std::uint64_t n_out = preset_name == "cifar100_cnn" ? 100 : 10;
    arch.layers = {
        conv("conv1", "5x5x64", one_channel ? 1664 : 4864),
        pool("pool1", "2x2"),
        conv("conv2", "5x5x64", 102464),
        pool("pool2", "2x2"),
        fc("fc1", 1600, 1024),
        fc("fc2", 1024, 1024),
        fc("fc3", 1024, n_out),
    };
  } else if (preset_name == "emnistl_mlp") {
    arch.layers = {
        fc("fc1", 784, 1024),
        fc("fc2", 1024, 1024),
        fc("fc3", 1024, 1024),
        fc("fc4", 1024, 10),
    };
  } else if (preset_name == "desk_mlp") {
    arch.layers = {
        fc("fc1", 16, 32),
        fc("fc2", 32, 32),
        fc("fc3", 32, 10),
    };
  } else {
    throw std::invalid_argument("ArchSpec::preset: unknown preset '" +
                                preset_name + "'");
  }
  return arch;
}

ArchSpec ArchSpec::from_model(const LayeredModel& model,
                              const std::string& arch_name) {
  ArchSpec arch;
  arch.name = arch_name;
  for (const Layer& l : model.layers) {
    arch.layers.push_back(fc(l.name,
                             static_cast<std::uint64_t>(l.weights.rows()),
                             static_cast<std::uint64_t>(l.weights.cols())));
  }
  return arch;
}

std::map<std::string, std::uint64_t> param_counts(const ArchSpec& arch) {
  require(!arch.layers.empty(), "param_counts: empty architecture");
  std::map<std::string, std::uint64_t> counts;
  for (const LayerDesc& l : arch.layers) {
    require(counts.emplace(l.name, l.param_count).second,
            "param_counts: duplicate layer name " + l.name);
  }
  return counts;
}

double deployed_size(const ArchSpec& arch,
                     const std::vector<std::string>& trained,
                     double keep_ratio) {
  require(keep_ratio > 0.0 && keep_ratio <= 1.0,
          "deployed_size: keep_ratio must lie in (0, 1]");
  std::set<std::string> wanted(trained.begin(), trained.end());
  require(wanted.count(arch.final_layer().name) == 1,
          "deployed_size: the trained set must include the final layer");
  for (const std::string& name : trained) {
    require(arch.find(name) != nullptr,
            "deployed_size: unknown layer " + name);
  }
  double total = 0.0;
  for (const LayerDesc& l : arch.layers) {
    total += wanted.count(l.name)
                 ? static_cast<double>(l.param_count)
                 : keep_ratio * static_cast<double>(l.param_count);
  }
  return total;
}

std::uint64_t upload_cost(const ArchSpec& arch,
                          const std::vector<std::string>& trained) {
  std::uint64_t total = 0;
  std::set<std::string> seen;
  for (const std::string& name : trained) {
    const LayerDesc* l = arch.find(name);
    require(l != nullptr, "upload_cost: unknown layer " + name);
    if (seen.insert(name).second) total += l->param_count;
  }
  return total;
}

double relative_spread(const std::vector<double>& costs) {
  require(!costs.empty(), "relative_spread: empty cost list");
  const auto [mn, mx] = std::minmax_element(costs.begin(), costs.end());
  require(*mn != 0.0, "relative_spread: smallest cost is zero; undefined");
  return (*mx - *mn) / *mn;
}

Fraction scheme_upload_fraction(const ArchSpec& arch, int chosen_layers) {
  const auto trainable = arch.trainable_layers();
  const int total = static_cast<int>(trainable.size());
  require(total >= 1, "scheme_upload_fraction: no trainable layers");
  require(chosen_layers >= 0 && chosen_layers <= total - 1,
          "scheme_upload_fraction: chosen layer count exceeds the non-final "
          "layers");
  return Fraction{static_cast<std::uint64_t>(chosen_layers + 1),
                  static_cast<std::uint64_t>(total)};
}

Fraction opu_range_upload_fraction(const ArchSpec& arch, int min_layers,
                                   int max_layers) {
  const auto trainable = arch.trainable_layers();
  const int total = static_cast<int>(trainable.size());
  require(total >= 1, "opu_range_upload_fraction: no trainable layers");
  require(min_layers >= 0 && min_layers <= max_layers &&
              max_layers <= total - 1,
          "opu_range_upload_fraction: bad layer count range");
  // Expected chosen count is (min+max)/2, so the fraction is
  // (min + max + 2) / (2 * total).
  return Fraction{static_cast<std::uint64_t>(min_layers + max_layers + 2),
                  static_cast<std::uint64_t>(2 * total)};
}

SingleLayerReport single_layer_report(const ArchSpec& arch,
                                      double keep_ratio) {
  const auto trainable = arch.trainable_layers();
  require(trainable.size() >= 2,
          "single_layer_report: need a non-final trainable layer");
  const std::string final_name = arch.final_layer().name;
  SingleLayerReport report;
  report.keep_ratio = keep_ratio;
  std::vector<double> deployed, uploads;
  for (const std::string& layer : trainable) {
    if (layer == final_name) continue;
    SingleLayerVariant v;
    v.layer = layer;
    v.deployed = deployed_size(arch, {layer, final_name}, keep_ratio);
    v.upload = upload_cost(arch, {layer, final_name});
    deployed.push_back(v.deployed);
    uploads.push_back(static_cast<double>(v.upload));
    report.variants.push_back(std::move(v));
  }
  report.deployed_spread = relative_spread(deployed);
  report.upload_spread = relative_spread(uploads);
  return report;
}

}  // namespace fedp3
