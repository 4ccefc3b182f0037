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

#include <set>

#include "fedp3/accounting.hpp"
#include "fedp3/fedcore.hpp"

using namespace fedp3;

namespace {

LayeredModel test_model(std::uint64_t seed, std::vector<Index> dims = {
                                                 6, 8, 8, 8, 8, 4}) {
  RngStream rng = derive_stream(seed, stream_tag::kInit);
  return make_mlp(dims, rng);
}

Dataset test_data(std::uint64_t seed, Index n = 400, Index f = 6, int c = 4) {
  RngStream rng = derive_stream(seed, stream_tag::kData);
  return gen_synthetic(n, f, c, 3.0, rng);
}

std::vector<ClientPlan> plans_for(const LayeredModel& model, int n,
                                  const std::string& scheme,
                                  double keep_ratio = 1.0,
                                  LocalStrategy strategy = LocalStrategy::kFixed,
                                  std::uint64_t seed = 5) {
  RngStream rng = derive_stream(seed, stream_tag::kPlans);
  return make_plans(model, n, PlanScheme::parse(scheme), keep_ratio, strategy,
                    5, 0.05, 0.7, rng);
}

}  // namespace

TEST_CASE("full scheme trains every layer") {
  const LayeredModel model = test_model(1);
  const auto plans = plans_for(model, 3, "full");
  for (const auto& plan : plans) {
    CHECK(plan.layers.size() == model.layers.size());
  }
}

TEST_CASE("lowerb plans are deterministic and hold one layer plus the final") {
  const LayeredModel model = test_model(1);
  const auto a = plans_for(model, 100, "lowerb", 1.0, LocalStrategy::kFixed, 9);
  const auto b = plans_for(model, 100, "lowerb", 1.0, LocalStrategy::kFixed, 9);
  for (int i = 0; i < 100; ++i) {
    CHECK(a[static_cast<std::size_t>(i)].layers ==
          b[static_cast<std::size_t>(i)].layers);
    CHECK(a[static_cast<std::size_t>(i)].layers.size() == 2);
    CHECK(a[static_cast<std::size_t>(i)].layers.back() ==
          model.output_layer().name);
  }
}

TEST_CASE("opu3 hits the layer-count upload fraction in expectation") {
  // Five trainable layers (4 hidden + final): opu3 uploads 4/5 of the layer
  // count, the accounting module's 20% reduction.
  const LayeredModel model = test_model(2);
  const ArchSpec arch = ArchSpec::from_model(model);
  const Fraction f = scheme_upload_fraction(arch, 3);
  CHECK(f.num == 4);
  CHECK(f.den == 5);
  const auto plans = plans_for(model, 500, "opu3");
  double layer_sum = 0.0;
  for (const auto& plan : plans) layer_sum += plan.layers.size();
  CHECK(layer_sum / 500.0 == doctest::Approx(4.0));

  // Chosen layers are uniform over the non-final ones.
  std::vector<int> hits(model.layers.size(), 0);
  for (const auto& plan : plans) {
    for (const auto& name : plan.layers) {
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        if (model.layers[l].name == name) ++hits[l];
      }
    }
  }
  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
    CHECK(hits[l] > 280);  // 500 * 3/4 = 375 expected
    CHECK(hits[l] < 470);
  }
}

TEST_CASE("opu_range draws counts inside the range") {
  const LayeredModel model = test_model(3);
  RngStream rng = derive_stream(11, stream_tag::kPlans);
  const auto plans =
      make_plans(model, 200, PlanScheme::parse("opu_range(2,3)"), 1.0,
                 LocalStrategy::kFixed, 5, 0.05, 0.7, rng);
  std::set<std::size_t> sizes;
  for (const auto& plan : plans) sizes.insert(plan.layers.size());
  CHECK(sizes == std::set<std::size_t>{3, 4});
}

TEST_CASE("infeasible schemes are rejected") {
  const LayeredModel small = test_model(4, {6, 8, 4});  // 1 hidden layer
  RngStream rng = derive_stream(1, stream_tag::kPlans);
  CHECK_THROWS_AS(make_plans(small, 2, PlanScheme::parse("opu3"), 1.0,
                             LocalStrategy::kFixed, 5, 0.05, 0.7, rng),
                  std::invalid_argument);
}

TEST_CASE("dispatch at keep ratio 1 ships the model verbatim") {
  const LayeredModel model = test_model(5);
  auto plans = plans_for(model, 1, "lowerb", 1.0);
  RngStream rng = derive_stream(2, stream_tag::kPruningMask);
  const DispatchPayload payload = dispatch(model, plans[0], rng);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    CHECK((payload.model.layers[l].weights - model.layers[l].weights)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
  CHECK(dispatch_scalar_count(payload, plans[0]) ==
        static_cast<std::uint64_t>(model.param_count()));
}

TEST_CASE("dispatch download counter matches the sampled masks") {
  const LayeredModel model = test_model(6);
  auto plans = plans_for(model, 1, "lowerb", 0.9);
  RngStream rng = derive_stream(3, stream_tag::kPruningMask);
  const DispatchPayload payload = dispatch(model, plans[0], rng);
  const std::set<std::string> trained(plans[0].layers.begin(),
                                      plans[0].layers.end());
  std::uint64_t expect = 0;
  double masked_total = 0.0;
  for (const Layer& layer : model.layers) {
    if (trained.count(layer.name)) {
      expect += static_cast<std::uint64_t>(layer.weights.size());
    } else {
      expect += payload.masks.at(layer.name).kept.size();
      masked_total += static_cast<double>(layer.weights.size());
    }
  }
  const std::uint64_t counted = dispatch_scalar_count(payload, plans[0]);
  CHECK(counted == expect);
  // Within four binomial standard deviations of 0.9 * masked params.
  const double mean = 0.9 * masked_total;
  const double sd = std::sqrt(masked_total * 0.9 * 0.1);
  const double masked_kept =
      static_cast<double>(counted) -
      static_cast<double>(model.param_count()) + masked_total;
  CHECK(std::abs(masked_kept - mean) <= 4.0 * sd);
}

TEST_CASE("dispatch with a full plan carries no masks") {
  const LayeredModel model = test_model(7);
  auto plans = plans_for(model, 1, "full", 0.5);
  RngStream rng = derive_stream(4, stream_tag::kPruningMask);
  const DispatchPayload payload = dispatch(model, plans[0], rng);
  CHECK(payload.masks.empty());
}

TEST_CASE("fixed strategy with one step is a plain SGD step") {
  const LayeredModel model = test_model(8);
  const Dataset data = test_data(8);
  std::vector<Index> idx(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  const Batch shard = gather(data, idx);

  auto plans = plans_for(model, 1, "full");
  plans[0].local_steps = 1;
  RngStream mask_rng = derive_stream(5, stream_tag::kPruningMask);
  const DispatchPayload payload = dispatch(model, plans[0], mask_rng);

  RngStream local_rng = derive_stream(5, stream_tag::kLocalUpdate);
  RngStream oracle_rng = derive_stream(5, stream_tag::kLocalUpdate);
  const UploadPayload upload =
      local_update(payload, plans[0], shard, 48, local_rng);

  // Oracle: same batch draw, one gradient step by hand.
  Batch batch;
  {
    const auto rows = sample_batch_indices(shard.size(), 48, oracle_rng);
    batch.features = Matrix(static_cast<Index>(rows.size()), shard.features.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      batch.features.row(static_cast<Index>(r)) = shard.features.row(rows[r]);
      batch.labels.push_back(shard.labels[static_cast<std::size_t>(rows[r])]);
    }
  }
  const GradientReport g = mlp_loss_and_grad(model, batch);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Matrix expect =
        model.layers[l].weights - plans[0].learning_rate * g.grads[l];
    CHECK((upload.layers.at(model.layers[l].name) - expect)
              .cwiseAbs()
              .maxCoeff() <= 1e-15);
  }
}

TEST_CASE("ordered dropout keeps the leading block") {
  const auto [r, c] = ordered_dropout_keep_counts(1024, 1024, 0.5);
  CHECK(r == 512);
  CHECK(c == 512);
  const auto [r2, c2] = ordered_dropout_keep_counts(10, 4, 0.26);
  CHECK(r2 == 3);  // ceil(2.6)
  CHECK(c2 == 2);  // ceil(1.04)
}

TEST_CASE("uniform strategy with q_lo = 1 degenerates to fixed") {
  const LayeredModel model = test_model(9);
  const Dataset data = test_data(9);
  std::vector<Index> idx(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  const Batch shard = gather(data, idx);

  auto fixed_plans = plans_for(model, 1, "lowerb", 0.8, LocalStrategy::kFixed);
  auto uniform_plans =
      plans_for(model, 1, "lowerb", 0.8, LocalStrategy::kUniform);
  uniform_plans[0].uniform_q_lo = 1.0;

  RngStream mask_a = derive_stream(6, stream_tag::kPruningMask);
  RngStream mask_b = derive_stream(6, stream_tag::kPruningMask);
  const DispatchPayload pa = dispatch(model, fixed_plans[0], mask_a);
  const DispatchPayload pb = dispatch(model, uniform_plans[0], mask_b);

  RngStream la = derive_stream(6, stream_tag::kLocalUpdate);
  RngStream lb = derive_stream(6, stream_tag::kLocalUpdate);
  const UploadPayload ua = local_update(pa, fixed_plans[0], shard, 32, la);
  const UploadPayload ub = local_update(pb, uniform_plans[0], shard, 32, lb);
  REQUIRE(ua.layers.size() == ub.layers.size());
  for (const auto& [name, w] : ua.layers) {
    CHECK((w - ub.layers.at(name)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("dispatch-mask zeros persist through the whole local run") {
  const LayeredModel model = test_model(10);
  const Dataset data = test_data(10);
  std::vector<Index> idx(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  const Batch shard = gather(data, idx);

  for (LocalStrategy strategy :
       {LocalStrategy::kFixed, LocalStrategy::kUniform,
        LocalStrategy::kOrderedDropout}) {
    auto plans = plans_for(model, 1, "lowerb", 0.5, strategy);
    plans[0].local_steps = 6;
    RngStream mask_rng = derive_stream(7, stream_tag::kPruningMask);
    const DispatchPayload payload = dispatch(model, plans[0], mask_rng);
    RngStream local_rng = derive_stream(7, stream_tag::kLocalUpdate);
    const LayeredModel local =
        local_train(payload, plans[0], shard, 32, local_rng);
    for (const auto& [name, mask] : payload.masks) {
      const Vector ind = mask.indicator();
      const Layer* layer = local.find(name);
      const Vector flat = layer->weights.reshaped();
      for (Index j = 0; j < flat.size(); ++j) {
        if (ind[j] == 0.0) CHECK(flat[j] == 0.0);
      }
    }
  }
}

TEST_CASE("uploads never carry layers outside the plan") {
  const LayeredModel model = test_model(11);
  const Dataset data = test_data(11);
  std::vector<Index> idx(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  const Batch shard = gather(data, idx);
  auto plans = plans_for(model, 1, "opu2", 0.9);
  RngStream mask_rng = derive_stream(8, stream_tag::kPruningMask);
  const DispatchPayload payload = dispatch(model, plans[0], mask_rng);
  RngStream local_rng = derive_stream(8, stream_tag::kLocalUpdate);
  const UploadPayload upload =
      local_update(payload, plans[0], shard, 32, local_rng);
  const std::set<std::string> allowed(plans[0].layers.begin(),
                                      plans[0].layers.end());
  CHECK(upload.layers.size() == allowed.size());
  for (const auto& [name, w] : upload.layers) {
    CHECK(allowed.count(name) == 1);
  }

  // aggregate enforces the contract structurally.
  UploadPayload rogue = upload;
  rogue.layers["fc9"] = Matrix::Zero(2, 2);
  CHECK_THROWS_AS(aggregate({rogue}, plans, model, AggregationMode::kSimple),
                  std::invalid_argument);

  // Inconsistent shapes across uploads are rejected.
  UploadPayload bad_shape = upload;
  bad_shape.layers.begin()->second = Matrix::Zero(1, 1);
  CHECK_THROWS_AS(
      aggregate({bad_shape}, plans, model, AggregationMode::kSimple),
      ShapeError);
}

TEST_CASE("aggregation: singleton, mean, weighted and conservation") {
  LayeredModel prev;
  Layer a{"fc1", Matrix::Zero(1, 1), Activation::kRelu};
  Layer b{"fc2", Matrix::Zero(1, 1), Activation::kNone};
  prev.layers = {a, b};
  prev.layers[0].weights << -1.0;
  prev.layers[1].weights << 7.0;

  std::vector<ClientPlan> plans(2);
  plans[0].client_id = 0;
  plans[0].layers = {"fc1", "fc2"};
  plans[1].client_id = 1;
  plans[1].layers = {"fc1", "fc2"};

  UploadPayload u0{0, {{"fc1", (Matrix(1, 1) << 2.0).finished()}}};
  UploadPayload u1{1, {{"fc1", (Matrix(1, 1) << 4.0).finished()}}};

  for (AggregationMode mode :
       {AggregationMode::kSimple, AggregationMode::kWeighted,
        AggregationMode::kAttention}) {
    // One uploader: verbatim weights in every mode.
    const LayeredModel one = aggregate({u0}, plans, prev, mode);
    CHECK(one.find("fc1")->weights(0, 0) == 2.0);
    // fc2 uploaded by nobody: exactly the previous round's weights.
    CHECK(one.find("fc2")->weights(0, 0) == 7.0);
  }

  const LayeredModel mean =
      aggregate({u0, u1}, plans, prev, AggregationMode::kSimple);
  CHECK(mean.find("fc1")->weights(0, 0) == doctest::Approx(3.0));

  // Weighted by layer counts 2 vs 4: (2*0 + 4*6) / 6 = 4.
  std::vector<ClientPlan> wplans(2);
  wplans[0].client_id = 0;
  wplans[0].layers = {"fc1", "fc2"};
  wplans[1].client_id = 1;
  wplans[1].layers = {"fc1", "fc2", "x1", "x2"};
  UploadPayload w0{0, {{"fc1", (Matrix(1, 1) << 0.0).finished()}}};
  UploadPayload w1{1, {{"fc1", (Matrix(1, 1) << 6.0).finished()}}};
  LayeredModel prev2 = prev;
  const LayeredModel weighted =
      aggregate({w0, w1}, wplans, prev2, AggregationMode::kWeighted);
  CHECK(weighted.find("fc1")->weights(0, 0) == doctest::Approx(4.0));
}

TEST_CASE("attention weighting favors updates aligned with the mean") {
  LayeredModel prev;
  prev.layers = {Layer{"fc1", Matrix::Zero(1, 2), Activation::kNone}};
  std::vector<ClientPlan> plans(3);
  for (int i = 0; i < 3; ++i) {
    plans[static_cast<std::size_t>(i)].client_id = i;
    plans[static_cast<std::size_t>(i)].layers = {"fc1"};
  }
  // Two clients move in one direction, the third moves against them.
  UploadPayload u0{0, {{"fc1", (Matrix(1, 2) << 1.0, 0.0).finished()}}};
  UploadPayload u1{1, {{"fc1", (Matrix(1, 2) << 0.8, 0.1).finished()}}};
  UploadPayload u2{2, {{"fc1", (Matrix(1, 2) << -1.0, 0.0).finished()}}};
  const LayeredModel simple =
      aggregate({u0, u1, u2}, plans, prev, AggregationMode::kSimple);
  const LayeredModel attn =
      aggregate({u0, u1, u2}, plans, prev, AggregationMode::kAttention, 4.0);
  // Down-weighting the dissenting client pulls the result above the mean.
  CHECK(attn.find("fc1")->weights(0, 0) > simple.find("fc1")->weights(0, 0));
}

TEST_CASE("aggregation modes coincide where the theory says they must") {
  const LayeredModel model = test_model(12);
  const Dataset data = test_data(12);
  RngStream part_rng = derive_stream(12);
  const Partition parts = split_classwise(data, 3, 2, part_rng);
  auto plans = plans_for(model, 3, "full");
  std::vector<UploadPayload> uploads;
  for (int i = 0; i < 3; ++i) {
    const Batch shard =
        gather(data, parts.client_indices[static_cast<std::size_t>(i)]);
    RngStream mask_rng = derive_stream(13, 0, i, stream_tag::kPruningMask);
    const DispatchPayload payload =
        dispatch(model, plans[static_cast<std::size_t>(i)], mask_rng);
    RngStream local_rng = derive_stream(13, 0, i, stream_tag::kLocalUpdate);
    uploads.push_back(local_update(payload, plans[static_cast<std::size_t>(i)],
                                   shard, 32, local_rng));
  }
  const LayeredModel simple =
      aggregate(uploads, plans, model, AggregationMode::kSimple);
  const LayeredModel weighted =
      aggregate(uploads, plans, model, AggregationMode::kWeighted);
  const LayeredModel attention0 =
      aggregate(uploads, plans, model, AggregationMode::kAttention, 0.0);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    CHECK((simple.layers[l].weights - weighted.layers[l].weights)
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK((simple.layers[l].weights - attention0.layers[l].weights)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}

TEST_CASE("run_fedp3 with zero rounds returns no metrics") {
  const LayeredModel model = test_model(13);
  const Dataset data = test_data(13);
  RngStream rng = derive_stream(13);
  const Partition parts = split_classwise(data, 2, 2, rng);
  auto [train, test] = split_train_test(parts, 0.7, rng);
  FedRunConfig cfg;
  cfg.init_model = model;
  cfg.data = &data;
  cfg.train_parts = train;
  cfg.test_parts = test;
  cfg.plans = plans_for(model, 2, "full");
  cfg.rounds = 0;
  cfg.seed = 1;
  CHECK(run_fedp3(cfg).empty());
}

TEST_CASE("single-client unpruned run equals centralized SGD") {
  const LayeredModel model = test_model(14);
  const Dataset data = test_data(14, 200);
  Partition train, test;
  std::vector<Index> all(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  train.client_indices = {all};
  test.client_indices = {{}};

  FedRunConfig cfg;
  cfg.init_model = model;
  cfg.data = &data;
  cfg.train_parts = train;
  cfg.test_parts = test;
  cfg.plans = plans_for(model, 1, "full");
  cfg.plans[0].local_steps = 4;
  cfg.rounds = 5;
  cfg.batch_size = 32;
  cfg.seed = 77;
  const auto metrics = run_fedp3(cfg);
  REQUIRE(metrics.size() == 5);

  // Centralized oracle: same stream derivation, same batch draws.
  const Batch shard = gather(data, all);
  LayeredModel oracle = model;
  for (int t = 0; t < 5; ++t) {
    RngStream rng = derive_stream(77, static_cast<std::uint64_t>(t), 0,
                                  stream_tag::kLocalUpdate);
    for (int k = 0; k < 4; ++k) {
      const auto rows = sample_batch_indices(shard.size(), 32, rng);
      Batch batch;
      batch.features =
          Matrix(static_cast<Index>(rows.size()), shard.features.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        batch.features.row(static_cast<Index>(r)) =
            shard.features.row(rows[r]);
        batch.labels.push_back(shard.labels[static_cast<std::size_t>(rows[r])]);
      }
      const GradientReport g = mlp_loss_and_grad(oracle, batch);
      for (std::size_t l = 0; l < oracle.layers.size(); ++l) {
        oracle.layers[l].weights -= cfg.plans[0].learning_rate * g.grads[l];
      }
    }
  }
  const double err = mlp_loss(oracle, shard);
  CHECK(metrics.back().train_loss == doctest::Approx(err).epsilon(1e-10));
}

TEST_CASE("upload counter is recomputable from the plans") {
  const LayeredModel model = test_model(15);
  const Dataset data = test_data(15);
  RngStream rng = derive_stream(15);
  const Partition parts = split_classwise(data, 4, 2, rng);
  auto [train, test] = split_train_test(parts, 0.7, rng);
  FedRunConfig cfg;
  cfg.init_model = model;
  cfg.data = &data;
  cfg.train_parts = train;
  cfg.test_parts = test;
  cfg.plans = plans_for(model, 4, "opu2", 0.9);
  cfg.rounds = 3;
  cfg.seed = 5;
  const auto metrics = run_fedp3(cfg);

  std::uint64_t expect = 0;
  for (int t = 0; t < 3; ++t) {
    for (const auto& plan : cfg.plans) {
      for (const auto& name : plan.layers) {
        expect += static_cast<std::uint64_t>(model.find(name)->weights.size());
      }
    }
  }
  CHECK(metrics.back().up_scalars_cum == expect);
  CHECK(metrics.front().up_scalars_cum == expect / 3);

  // The accounting module predicts the same totals from the plans alone.
  const ArchSpec arch = ArchSpec::from_model(model);
  std::uint64_t predicted = 0;
  for (int t = 0; t < 3; ++t) {
    for (const auto& plan : cfg.plans) {
      predicted += upload_cost(arch, plan.layers);
    }
  }
  CHECK(metrics.back().up_scalars_cum == predicted);

  // Cumulative counters never decrease.
  for (std::size_t t = 1; t < metrics.size(); ++t) {
    CHECK(metrics[t].up_scalars_cum >= metrics[t - 1].up_scalars_cum);
    CHECK(metrics[t].down_scalars_cum >= metrics[t - 1].down_scalars_cum);
  }
}

TEST_CASE("full-scheme upload counter equals the whole model every round") {
  const LayeredModel model = test_model(18);
  const Dataset data = test_data(18);
  RngStream rng = derive_stream(18);
  const Partition parts = split_classwise(data, 3, 2, rng);
  auto [train, test] = split_train_test(parts, 0.7, rng);
  FedRunConfig cfg;
  cfg.init_model = model;
  cfg.data = &data;
  cfg.train_parts = train;
  cfg.test_parts = test;
  cfg.plans = plans_for(model, 3, "full");
  cfg.rounds = 2;
  cfg.seed = 8;
  const auto metrics = run_fedp3(cfg);
  const std::uint64_t total = static_cast<std::uint64_t>(model.param_count());
  CHECK(metrics.back().up_scalars_cum == 2 * 3 * total);
  CHECK(metrics.back().down_scalars_cum == 2 * 3 * total);  // keep ratio 1
}

TEST_CASE("thread count does not change the results") {
  const LayeredModel model = test_model(16);
  const Dataset data = test_data(16);
  RngStream rng = derive_stream(16);
  const Partition parts = split_classwise(data, 4, 2, rng);
  auto [train, test] = split_train_test(parts, 0.7, rng);
  FedRunConfig cfg;
  cfg.init_model = model;
  cfg.data = &data;
  cfg.train_parts = train;
  cfg.test_parts = test;
  cfg.plans = plans_for(model, 4, "opu2", 0.8, LocalStrategy::kUniform);
  cfg.rounds = 3;
  cfg.seed = 6;
  cfg.threads = 1;
  const auto seq = run_fedp3(cfg);
  cfg.threads = 2;
  const auto par = run_fedp3(cfg);
  REQUIRE(seq.size() == par.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    CHECK(seq[t].train_loss == par[t].train_loss);
    CHECK(seq[t].test_accuracy == par[t].test_accuracy);
    CHECK(seq[t].up_scalars_cum == par[t].up_scalars_cum);
    CHECK(seq[t].down_scalars_cum == par[t].down_scalars_cum);
  }
}

TEST_CASE("divergence carries the round context") {
  const LayeredModel model = test_model(17);
  const Dataset data = test_data(17);
  RngStream rng = derive_stream(17);
  const Partition parts = split_classwise(data, 2, 2, rng);
  auto [train, test] = split_train_test(parts, 0.7, rng);
  FedRunConfig cfg;
  cfg.init_model = model;
  cfg.data = &data;
  cfg.train_parts = train;
  cfg.test_parts = test;
  cfg.plans = plans_for(model, 2, "full");
  for (auto& plan : cfg.plans) plan.learning_rate = 1e18;
  cfg.rounds = 4;
  cfg.seed = 7;
  try {
    run_fedp3(cfg);
    FAIL("expected divergence");
  } catch (const DivergedError& e) {
    CHECK(e.round >= 0);
  }
}
