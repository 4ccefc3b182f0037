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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedp3/accounting.hpp"

using namespace fedp3;

TEST_CASE("cifar_cnn preset reproduces the printed parameter table") {
  const ArchSpec arch = ArchSpec::preset("cifar_cnn");
  const auto counts = param_counts(arch);
  CHECK(counts.at("conv1") == 4864);
  CHECK(counts.at("conv2") == 102464);
  CHECK(counts.at("fc1") == 1638400);
  CHECK(counts.at("fc2") == 1048576);
  CHECK(counts.at("fc3") == 10240);
  CHECK(arch.total_params() == 4864 + 102464 + 1638400 + 1048576 + 10240);
  CHECK(arch.trainable_layers().size() == 5);
}

TEST_CASE("variant presets carry the printed alternates") {
  CHECK(param_counts(ArchSpec::preset("cifar100_cnn")).at("fc3") == 102400);
  CHECK(param_counts(ArchSpec::preset("fashion_cnn")).at("conv1") == 1664);
}

TEST_CASE("emnistl_mlp preset reproduces the printed parameter table") {
  const ArchSpec arch = ArchSpec::preset("emnistl_mlp");
  const auto counts = param_counts(arch);
  CHECK(counts.at("fc1") == 802816);
  CHECK(counts.at("fc2") == 1048576);
  CHECK(counts.at("fc3") == 1048576);
  CHECK(counts.at("fc4") == 10240);
}

TEST_CASE("desk_mlp preset uses plain in*out products") {
  const ArchSpec arch = ArchSpec::preset("desk_mlp");
  const auto counts = param_counts(arch);
  CHECK(counts.at("fc1") == 512);
  CHECK(counts.at("fc2") == 1024);
  CHECK(counts.at("fc3") == 320);
}

TEST_CASE("unknown presets and layers are rejected") {
  CHECK_THROWS_AS(ArchSpec::preset("resnet99"), std::invalid_argument);
  const ArchSpec arch = ArchSpec::preset("desk_mlp");
  CHECK_THROWS_AS(upload_cost(arch, {"fc9"}), std::invalid_argument);
  CHECK_THROWS_AS(deployed_size(arch, {"fc1"}, 0.5), std::invalid_argument);
}

TEST_CASE("deployed size matches the hand-computed table arithmetic") {
  const ArchSpec arch = ArchSpec::preset("cifar_cnn");
  // p = 1 ships the full model regardless of the trained set.
  CHECK(deployed_size(arch, {"conv1", "fc3"}, 1.0) ==
        doctest::Approx(2804544.0));
  // conv1 + final at p = 0.5.
  CHECK(deployed_size(arch, {"conv1", "fc3"}, 0.5) ==
        doctest::Approx(1409824.0));
}

TEST_CASE("deployed size is monotone in p and in the trained set") {
  const ArchSpec arch = ArchSpec::preset("cifar_cnn");
  double prev = 0.0;
  for (double p : {0.1, 0.3, 0.5, 0.7, 0.9, 1.0}) {
    const double cur = deployed_size(arch, {"conv1", "fc3"}, p);
    CHECK(cur >= prev);
    prev = cur;
  }
  CHECK(deployed_size(arch, {"conv1", "fc3"}, 0.5) <=
        deployed_size(arch, {"conv1", "fc1", "fc3"}, 0.5));
}

TEST_CASE("upload costs of the single-layer variants") {
  const ArchSpec arch = ArchSpec::preset("cifar_cnn");
  CHECK(upload_cost(arch, {"conv1", "fc3"}) == 15104);
  CHECK(upload_cost(arch, {"fc2", "fc3"}) == 1058816);
  CHECK(relative_spread({1.0, 1.0, 1.0}) == 0.0);
  CHECK_THROWS_AS(relative_spread({0.0, 1.0}), std::invalid_argument);
}

// The figure annotations follow the caption formula
// (largest - smallest) / smallest, applied to deployed sizes at p = 0.5 for
// the "57.93% smaller" remark and to upload costs for the per-dataset
// communication ratios (printed as percentages).
TEST_CASE("single-layer report reproduces the printed ratios") {
  {
    const SingleLayerReport r =
        single_layer_report(ArchSpec::preset("cifar_cnn"), 0.5);
    CHECK(r.deployed_spread == doctest::Approx(0.5793).epsilon(1e-3));
    CHECK(100.0 * r.upload_spread == doctest::Approx(10815.0).epsilon(1e-4));
  }
  {
    const SingleLayerReport r =
        single_layer_report(ArchSpec::preset("cifar100_cnn"), 0.5);
    CHECK(100.0 * r.upload_spread == doctest::Approx(1522.91).epsilon(1e-4));
  }
  {
    const SingleLayerReport r =
        single_layer_report(ArchSpec::preset("fashion_cnn"), 0.5);
    CHECK(100.0 * r.upload_spread == doctest::Approx(13749.46).epsilon(1e-4));
  }
  {
    const SingleLayerReport r =
        single_layer_report(ArchSpec::preset("emnistl_mlp"), 0.5);
    CHECK(100.0 * r.upload_spread == doctest::Approx(30.23).epsilon(1e-3));
  }
}

TEST_CASE("scheme upload fractions on a five-trainable-layer architecture") {
  const ArchSpec arch = ArchSpec::preset("cifar_cnn");
  const Fraction lowerb = scheme_upload_fraction(arch, 1);
  const Fraction opu2 = scheme_upload_fraction(arch, 2);
  const Fraction opu3 = scheme_upload_fraction(arch, 3);
  const Fraction full = scheme_upload_fraction(arch, 4);
  // Exact: uploads 2/5, 3/5, 4/5, 5/5 => reductions 60%, 40%, 20%, 0%.
  CHECK(lowerb.num == 2);
  CHECK(lowerb.den == 5);
  CHECK(opu2.num == 3);
  CHECK(opu2.den == 5);
  CHECK(opu3.num == 4);
  CHECK(opu3.den == 5);
  CHECK(full.num == 5);
  CHECK(full.den == 5);
  const Fraction ranged = opu_range_upload_fraction(arch, 2, 3);
  CHECK(ranged.num == 7);   // mean 2.5 chosen + 1 final over 5 layers
  CHECK(ranged.den == 10);
}

TEST_CASE("from_model mirrors a layered model's counts") {
  RngStream rng = derive_stream(3);
  const LayeredModel model = make_mlp({16, 32, 32, 10}, rng);
  const ArchSpec arch = ArchSpec::from_model(model);
  CHECK(arch.total_params() == static_cast<std::uint64_t>(model.param_count()));
  CHECK(arch.final_layer().name == model.output_layer().name);
}
