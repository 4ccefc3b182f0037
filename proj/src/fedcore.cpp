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

#include "fedp3/fedcore.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <set>
#include <thread>

namespace fedp3 {

LocalStrategy parse_local_strategy(const std::string& name) {
  if (name == "fixed") return LocalStrategy::kFixed;
  if (name == "uniform") return LocalStrategy::kUniform;
  if (name == "ordered_dropout") return LocalStrategy::kOrderedDropout;
  throw std::invalid_argument("unknown local strategy '" + name + "'");
}

AggregationMode parse_aggregation_mode(const std::string& name) {
  if (name == "simple") return AggregationMode::kSimple;
  if (name == "weighted") return AggregationMode::kWeighted;
  if (name == "attention") return AggregationMode::kAttention;
  throw std::invalid_argument("unknown aggregation mode '" + name + "'");
}

std::string to_string(LocalStrategy s) {
  switch (s) {
    case LocalStrategy::kFixed: return "fixed";
    case LocalStrategy::kUniform: return "uniform";
    case LocalStrategy::kOrderedDropout: return "ordered_dropout";
  }
  return "?";
}

std::string to_string(AggregationMode m) {
  switch (m) {
    case AggregationMode::kSimple: return "simple";
    case AggregationMode::kWeighted: return "weighted";
    case AggregationMode::kAttention: return "attention";
  }
  return "?";
}

PlanScheme PlanScheme::parse(const std::string& text) {
  PlanScheme s;
  if (text == "full") {
    s.kind = Kind::kFull;
  } else if (text == "lowerb") {
    s.kind = Kind::kLowerB;
  } else if (text == "opu2") {
    s.kind = Kind::kOpu2;
  } else if (text == "opu3") {
    s.kind = Kind::kOpu3;
  } else if (text.rfind("opu_range(", 0) == 0 && text.back() == ')') {
    const std::string body = text.substr(10, text.size() - 11);
    const auto comma = body.find(',');
    require(comma != std::string::npos,
            "plan scheme: opu_range needs two bounds, e.g. opu_range(2,3)");
    s.kind = Kind::kOpuRange;
    s.range_min = std::stoi(body.substr(0, comma));
    s.range_max = std::stoi(body.substr(comma + 1));
    require(s.range_min >= 1 && s.range_min <= s.range_max,
            "plan scheme: opu_range bounds must satisfy 1 <= a <= b");
  } else {
    throw std::invalid_argument("unknown plan scheme '" + text + "'");
  }
  return s;
}

std::string PlanScheme::to_string() const {
  switch (kind) {
    case Kind::kFull: return "full";
    case Kind::kLowerB: return "lowerb";
    case Kind::kOpu2: return "opu2";
    case Kind::kOpu3: return "opu3";
    case Kind::kOpuRange:
      return "opu_range(" + std::to_string(range_min) + "," +
             std::to_string(range_max) + ")";
  }
  return "?";
}

std::vector<ClientPlan> make_plans(const LayeredModel& model, int n_clients,
                                   const PlanScheme& scheme, double keep_ratio,
                                   LocalStrategy strategy, int local_steps,
                                   double learning_rate, double uniform_q_lo,
                                   RngStream& rng) {
  model.validate();
  require(n_clients >= 1, "make_plans: need at least one client");
  require(keep_ratio > 0.0 && keep_ratio <= 1.0,
          "make_plans: keep_ratio must lie in (0, 1]");
  require(local_steps >= 1, "make_plans: local_steps must be positive");

  const int n_hidden = static_cast<int>(model.layers.size()) - 1;
  int lo = 0, hi = 0;
  switch (scheme.kind) {
    case PlanScheme::Kind::kFull: lo = hi = n_hidden; break;
    case PlanScheme::Kind::kLowerB: lo = hi = 1; break;
    case PlanScheme::Kind::kOpu2: lo = hi = 2; break;
    case PlanScheme::Kind::kOpu3: lo = hi = 3; break;
    case PlanScheme::Kind::kOpuRange:
      lo = scheme.range_min;
      hi = scheme.range_max;
      break;
  }
  require(hi <= n_hidden, "make_plans: scheme '" + scheme.to_string() +
                              "' asks for more non-final layers than the "
                              "architecture has");

  std::vector<ClientPlan> plans;
  plans.reserve(static_cast<std::size_t>(n_clients));
  for (int i = 0; i < n_clients; ++i) {
    ClientPlan plan;
    plan.client_id = i;
    plan.keep_ratio = keep_ratio;
    plan.strategy = strategy;
    plan.local_steps = local_steps;
    plan.learning_rate = learning_rate;
    plan.uniform_q_lo = uniform_q_lo;
    const int count =
        lo == hi ? lo
                 : lo + static_cast<int>(uniform_index(
                            rng, static_cast<std::uint64_t>(hi - lo + 1)));
    std::vector<std::int64_t> chosen;
    if (count == n_hidden) {
      chosen.resize(static_cast<std::size_t>(n_hidden));
      for (int l = 0; l < n_hidden; ++l) chosen[static_cast<std::size_t>(l)] = l;
    } else {
      chosen = sample_distinct(n_hidden, count, rng);
      std::sort(chosen.begin(), chosen.end());
    }
    for (std::int64_t l : chosen) {
      plan.layers.push_back(model.layers[static_cast<std::size_t>(l)].name);
    }
    plan.layers.push_back(model.output_layer().name);
    plans.push_back(std::move(plan));
  }
  return plans;
}

namespace {

std::set<std::string> plan_layer_set(const ClientPlan& plan) {
  return {plan.layers.begin(), plan.layers.end()};
}

}  // namespace

DispatchPayload dispatch(const LayeredModel& server_model,
                         const ClientPlan& plan, RngStream& rng) {
  server_model.validate();
  const auto trained = plan_layer_set(plan);
  for (const std::string& name : plan.layers) {
    require(server_model.find(name) != nullptr,
            "dispatch: plan references unknown layer " + name);
  }
  DispatchPayload payload;
  payload.model = server_model;
  for (Layer& layer : payload.model.layers) {
    if (trained.count(layer.name)) continue;
    PruningMask mask =
        sample_pruning_mask(layer.weights.size(), plan.keep_ratio, rng);
    layer.weights = layer.weights.cwiseProduct(
        mask.indicator().reshaped(layer.weights.rows(), layer.weights.cols()));
    payload.masks.emplace(layer.name, std::move(mask));
  }
  return payload;
}

std::uint64_t dispatch_scalar_count(const DispatchPayload& payload,
                                    const ClientPlan& plan) {
  const auto trained = plan_layer_set(plan);
  std::uint64_t count = 0;
  for (const Layer& layer : payload.model.layers) {
    if (trained.count(layer.name)) {
      count += static_cast<std::uint64_t>(layer.weights.size());
    } else {
      count += payload.masks.at(layer.name).kept.size();
    }
  }
  return count;
}

std::uint64_t upload_scalar_count(const UploadPayload& upload) {
  std::uint64_t count = 0;
  for (const auto& [name, w] : upload.layers) {
    count += static_cast<std::uint64_t>(w.size());
  }
  return count;
}

std::vector<Index> sample_batch_indices(Index shard_size, int batch_size,
                                        RngStream& rng) {
  require(shard_size >= 1, "sample_batch_indices: empty shard");
  if (static_cast<Index>(batch_size) >= shard_size) {
    std::vector<Index> all(static_cast<std::size_t>(shard_size));
    for (Index i = 0; i < shard_size; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (std::int64_t v : sample_distinct(shard_size, batch_size, rng)) {
    out.push_back(v);
  }
  return out;
}

namespace {

Batch sub_batch(const Batch& shard, const std::vector<Index>& rows) {
  Batch b;
  b.features = Matrix(static_cast<Index>(rows.size()), shard.features.cols());
  b.labels.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    b.features.row(static_cast<Index>(r)) = shard.features.row(rows[r]);
    b.labels.push_back(shard.labels[static_cast<std::size_t>(rows[r])]);
  }
  return b;
}

Matrix ordered_block_mask(Index rows, Index cols, double q) {
  const auto [keep_r, keep_c] = ordered_dropout_keep_counts(rows, cols, q);
  Matrix mask = Matrix::Zero(rows, cols);
  mask.topLeftCorner(keep_r, keep_c).setOnes();
  return mask;
}

Matrix bernoulli_mask(Index rows, Index cols, double q, RngStream& rng) {
  Matrix mask(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r)
      mask(r, c) = uniform_real(rng) < q ? 1.0 : 0.0;
  return mask;
}

}  // namespace

std::pair<Index, Index> ordered_dropout_keep_counts(Index rows, Index cols,
                                                    double q) {
  require(q > 0.0 && q <= 1.0,
          "ordered_dropout_keep_counts: q must lie in (0, 1]");
  const Index keep_r = std::min(
      rows, static_cast<Index>(std::ceil(q * static_cast<double>(rows))));
  const Index keep_c = std::min(
      cols, static_cast<Index>(std::ceil(q * static_cast<double>(cols))));
  return {keep_r, keep_c};
}

LayeredModel local_train(const DispatchPayload& payload,
                         const ClientPlan& plan, const Batch& shard,
                         int batch_size, RngStream& rng) {
  require(shard.size() > 0, "local_update: empty shard");
  require(batch_size >= 1, "local_update: batch size must be positive");
  const auto trained = plan_layer_set(plan);
  for (const Layer& layer : payload.model.layers) {
    if (!trained.count(layer.name)) {
      require(payload.masks.count(layer.name) == 1,
              "local_update: payload is missing the mask for layer " +
                  layer.name);
    }
  }

  LayeredModel local = payload.model;
  // Dispatch-mask indicators in layer order; dropped coordinates must stay
  // zero through every step.
  std::vector<Matrix> keep(local.layers.size());
  for (std::size_t l = 0; l < local.layers.size(); ++l) {
    const Layer& layer = local.layers[l];
    if (!trained.count(layer.name)) {
      keep[l] = payload.masks.at(layer.name)
                    .indicator()
                    .reshaped(layer.weights.rows(), layer.weights.cols());
    }
  }

  const bool degenerate_ratio = plan.uniform_q_lo >= 1.0;
  const double gamma = plan.learning_rate;
  for (int k = 0; k < plan.local_steps; ++k) {
    // Step-wise local pruning of the non-trainable layers.
    std::vector<Matrix> active(local.layers.size());
    bool any_masked = !payload.masks.empty();
    if (any_masked && plan.strategy != LocalStrategy::kFixed &&
        !degenerate_ratio) {
      const double q = uniform_real(rng, plan.uniform_q_lo, 1.0);
      for (std::size_t l = 0; l < local.layers.size(); ++l) {
        const Layer& layer = local.layers[l];
        if (trained.count(layer.name)) continue;
        active[l] = plan.strategy == LocalStrategy::kUniform
                        ? bernoulli_mask(layer.weights.rows(),
                                         layer.weights.cols(), q, rng)
                        : ordered_block_mask(layer.weights.rows(),
                                             layer.weights.cols(), q);
      }
    }

    LayeredModel effective = local;
    for (std::size_t l = 0; l < effective.layers.size(); ++l) {
      if (active[l].size() > 0) {
        effective.layers[l].weights =
            effective.layers[l].weights.cwiseProduct(active[l]);
      }
    }

    const Batch batch =
        sub_batch(shard, sample_batch_indices(shard.size(), batch_size, rng));
    const GradientReport report = mlp_loss_and_grad(effective, batch);
    if (!std::isfinite(report.loss)) {
      throw DivergedError("local update produced a non-finite loss", -1, k);
    }

    for (std::size_t l = 0; l < local.layers.size(); ++l) {
      Matrix step = report.grads[l];
      if (!trained.count(local.layers[l].name)) {
        step = step.cwiseProduct(keep[l]);
        if (active[l].size() > 0) step = step.cwiseProduct(active[l]);
      }
      local.layers[l].weights -= gamma * step;
    }
  }
  return local;
}

UploadPayload local_update(const DispatchPayload& payload,
                           const ClientPlan& plan, const Batch& shard,
                           int batch_size, RngStream& rng) {
  const LayeredModel local =
      local_train(payload, plan, shard, batch_size, rng);
  UploadPayload upload;
  upload.client_id = plan.client_id;
  for (const std::string& name : plan.layers) {
    upload.layers.emplace(name, local.find(name)->weights);
  }
  return upload;
}

LayeredModel aggregate(const std::vector<UploadPayload>& uploads,
                       const std::vector<ClientPlan>& plans,
                       const LayeredModel& prev_model, AggregationMode mode,
                       double attention_tau) {
  prev_model.validate();
  std::map<int, const ClientPlan*> plan_of;
  for (const ClientPlan& p : plans) plan_of[p.client_id] = &p;
  for (const UploadPayload& up : uploads) {
    require(plan_of.count(up.client_id) == 1,
            "aggregate: upload from a client without a plan");
    const auto allowed = plan_layer_set(*plan_of.at(up.client_id));
    for (const auto& [name, w] : up.layers) {
      require(allowed.count(name) == 1,
              "aggregate: upload carries layer " + name +
                  " outside the client's plan");
      const Layer* prev = prev_model.find(name);
      require(prev != nullptr, "aggregate: unknown layer " + name);
      require_shape(w.rows() == prev->weights.rows() &&
                        w.cols() == prev->weights.cols(),
                    "aggregate: inconsistent shapes for layer " + name);
    }
  }

  LayeredModel next = prev_model;
  for (Layer& layer : next.layers) {
    std::vector<const Matrix*> contribs;
    std::vector<double> raw;
    for (const UploadPayload& up : uploads) {
      const auto it = up.layers.find(layer.name);
      if (it == up.layers.end()) continue;
      contribs.push_back(&it->second);
      switch (mode) {
        case AggregationMode::kSimple:
          raw.push_back(1.0);
          break;
        case AggregationMode::kWeighted:
          raw.push_back(static_cast<double>(
              plan_of.at(up.client_id)->layers.size()));
          break;
        case AggregationMode::kAttention:
          raw.push_back(0.0);  // filled below from update directions
          break;
      }
    }
    if (contribs.empty()) continue;  // untouched layers keep prior weights

    if (mode == AggregationMode::kAttention) {
      // softmax(tau * cos(delta_i, mean delta)); tau = 0 recovers simple
      // averaging.
      std::vector<Matrix> deltas;
      deltas.reserve(contribs.size());
      Matrix mean_delta = Matrix::Zero(layer.weights.rows(),
                                       layer.weights.cols());
      for (const Matrix* w : contribs) {
        deltas.push_back(*w - layer.weights);
        mean_delta += deltas.back();
      }
      mean_delta /= static_cast<double>(contribs.size());
      const double mean_norm = mean_delta.norm();
      for (std::size_t i = 0; i < contribs.size(); ++i) {
        const double d_norm = deltas[i].norm();
        const double cos_sim =
            (d_norm < 1e-15 || mean_norm < 1e-15)
                ? 0.0
                : deltas[i].cwiseProduct(mean_delta).sum() /
                      (d_norm * mean_norm);
        raw[i] = std::exp(attention_tau * cos_sim);
      }
    }

    double total = 0.0;
    for (double r : raw) total += r;
    Matrix combined = Matrix::Zero(layer.weights.rows(), layer.weights.cols());
    for (std::size_t i = 0; i < contribs.size(); ++i) {
      combined += (raw[i] / total) * (*contribs[i]);
    }
    layer.weights = std::move(combined);
  }
  return next;
}

std::vector<RoundMetrics> run_fedp3(const FedRunConfig& config,
                                    LayeredModel* final_model) {
  require(config.data != nullptr, "run_fedp3: config needs a dataset");
  config.init_model.validate();
  const int n = static_cast<int>(config.plans.size());
  require(n >= 1, "run_fedp3: need at least one plan");
  require(config.train_parts.n_clients() == n &&
              config.test_parts.n_clients() == n,
          "run_fedp3: partition client counts must match the plans");
  require(config.rounds >= 0, "run_fedp3: negative round count");
  require(config.participation > 0.0 && config.participation <= 1.0,
          "run_fedp3: participation must lie in (0, 1]");

  // Materialize shards and the evaluation batches once.
  std::vector<Batch> shards(static_cast<std::size_t>(n));
  std::vector<Index> all_train, all_test;
  for (int i = 0; i < n; ++i) {
    const auto& idx = config.train_parts.client_indices[static_cast<std::size_t>(i)];
    require(!idx.empty(), "run_fedp3: client " + std::to_string(i) +
                              " has no training data");
    shards[static_cast<std::size_t>(i)] = gather(*config.data, idx);
    all_train.insert(all_train.end(), idx.begin(), idx.end());
    const auto& tidx = config.test_parts.client_indices[static_cast<std::size_t>(i)];
    all_test.insert(all_test.end(), tidx.begin(), tidx.end());
  }
  const Batch train_eval = gather(*config.data, all_train);
  const bool have_test = !all_test.empty();
  const Batch test_eval =
      have_test ? gather(*config.data, all_test) : Batch{};

  LayeredModel model = config.init_model;
  std::vector<RoundMetrics> metrics;
  metrics.reserve(static_cast<std::size_t>(config.rounds));
  std::uint64_t up_cum = 0, down_cum = 0;
  double last_loss = 0.0, last_acc = 0.0;

  for (int t = 0; t < config.rounds; ++t) {
    RngStream part_rng =
        derive_stream(config.seed, static_cast<std::uint64_t>(t), 0,
                      stream_tag::kParticipation);
    const int m = std::clamp(
        static_cast<int>(std::ceil(config.participation * n)), 1, n);
    std::vector<std::int64_t> participants = sample_distinct(n, m, part_rng);
    std::sort(participants.begin(), participants.end());

    std::vector<UploadPayload> uploads(static_cast<std::size_t>(m));
    std::vector<std::uint64_t> down_add(static_cast<std::size_t>(m), 0);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(m));

    auto worker = [&](int j) {
      try {
        const int i = static_cast<int>(participants[static_cast<std::size_t>(j)]);
        const ClientPlan& plan = config.plans[static_cast<std::size_t>(i)];
        RngStream mask_rng = derive_stream(
            config.seed, static_cast<std::uint64_t>(t),
            static_cast<std::uint64_t>(i), stream_tag::kPruningMask);
        DispatchPayload payload = dispatch(model, plan, mask_rng);
        down_add[static_cast<std::size_t>(j)] =
            dispatch_scalar_count(payload, plan);
        RngStream local_rng = derive_stream(
            config.seed, static_cast<std::uint64_t>(t),
            static_cast<std::uint64_t>(i), stream_tag::kLocalUpdate);
        uploads[static_cast<std::size_t>(j)] =
            local_update(payload, plan, shards[static_cast<std::size_t>(i)],
                         config.batch_size, local_rng);
      } catch (...) {
        errors[static_cast<std::size_t>(j)] = std::current_exception();
      }
    };

    const int n_threads = std::max(1, std::min(config.threads, m));
    if (n_threads == 1) {
      for (int j = 0; j < m; ++j) worker(j);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(n_threads));
      for (int w = 0; w < n_threads; ++w) {
        pool.emplace_back([&, w] {
          for (int j = w; j < m; j += n_threads) worker(j);
        });
      }
      for (auto& th : pool) th.join();
    }
    for (int j = 0; j < m; ++j) {
      if (!errors[static_cast<std::size_t>(j)]) continue;
      try {
        std::rethrow_exception(errors[static_cast<std::size_t>(j)]);
      } catch (const DivergedError& e) {
        throw DivergedError(std::string(e.what()) + " (round " +
                                std::to_string(t) + ")",
                            t, e.step);
      }
    }

    for (int j = 0; j < m; ++j) {
      down_cum += down_add[static_cast<std::size_t>(j)];
      up_cum += upload_scalar_count(uploads[static_cast<std::size_t>(j)]);
    }
    model = aggregate(uploads, config.plans, model, config.aggregation,
                      config.attention_tau);

    if (t % std::max(1, config.metrics_every) == 0 || t + 1 == config.rounds) {
      last_loss = mlp_loss(model, train_eval);
      last_acc = have_test ? mlp_accuracy(model, test_eval) : 0.0;
      if (!std::isfinite(last_loss)) {
        throw DivergedError("global loss became non-finite (round " +
                                std::to_string(t) + ")",
                            t, -1);
      }
    }
    metrics.push_back(RoundMetrics{t, last_loss, last_acc, up_cum, down_cum,
                                   config.tag});
  }
  if (final_model != nullptr) *final_model = model;
  return metrics;
}

}  // namespace fedp3
