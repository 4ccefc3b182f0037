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

#include "fedp3/ldp.hpp"

#include <algorithm>
#include <cmath>

namespace fedp3 {

void PrivacyBudget::validate() const {
  require(epsilon > 0.0, "privacy budget: epsilon must be positive");
  require(delta > 0.0 && delta < 1.0,
          "privacy budget: delta must lie in (0, 1)");
  require(samples_per_client >= 1, "privacy budget: m must be positive");
  require(minibatch >= 1 && minibatch <= samples_per_client,
          "privacy budget: minibatch must lie in [1, m]");
  require(grad_bound > 0.0, "privacy budget: gradient bound C must be positive");
  require(calibration_c > 0.0, "privacy budget: constant c must be positive");
  require(smoothness > 0.0, "privacy budget: smoothness L must be positive");
}

NoiseSpec calibrate_sigma(const PrivacyBudget& budget, int iterations,
                          Index dim) {
  budget.validate();
  require(iterations >= 1, "calibrate_sigma: need at least one iteration");
  require(dim >= 1, "calibrate_sigma: dim must be positive");
  const double m = static_cast<double>(budget.samples_per_client);
  const double variance = budget.calibration_c * budget.grad_bound *
                          budget.grad_bound *
                          static_cast<double>(iterations) *
                          std::log(1.0 / budget.delta) /
                          (m * m * budget.epsilon * budget.epsilon);
  return NoiseSpec{variance, dim};
}

LdpSchedule ldp_schedule(const PrivacyBudget& budget, double delta0,
                         Index dim) {
  budget.validate();
  require(delta0 >= 0.0, "ldp_schedule: Delta0 must be nonnegative");
  require(dim >= 1, "ldp_schedule: dim must be positive");
  const double m = static_cast<double>(budget.samples_per_client);
  const double d = static_cast<double>(dim);
  const double l = budget.smoothness;
  const double c = budget.calibration_c;
  const double cc = budget.grad_bound;
  const double eps = budget.epsilon;
  const double log_term = std::log(1.0 / budget.delta);

  LdpSchedule sched;
  sched.k_branch_gradient =
      m * eps * std::sqrt(l * delta0) / (cc * std::sqrt(c * d * log_term));
  sched.k_branch_privacy = m * m * eps * eps / (c * d * log_term);
  sched.iterations = static_cast<std::int64_t>(
      std::ceil(std::max(sched.k_branch_gradient, sched.k_branch_privacy)));
  sched.iterations = std::max<std::int64_t>(sched.iterations, 1);
  sched.step_size =
      std::min(1.0 / l, std::sqrt(delta0 * c * d * log_term) /
                            (cc * m * eps * std::sqrt(l)));
  sched.stationarity_bound =
      2.0 * cc * std::sqrt(l * c * d * log_term) / (m * eps);
  const double q = budget.sampling_rate();
  sched.gate_ok = eps < budget.gate_c_prime * q * q *
                            static_cast<double>(sched.iterations);
  return sched;
}

Vector clip_gradient(const Vector& g, double bound) {
  require(bound > 0.0, "clip_gradient: bound must be positive");
  const double norm = g.norm();
  if (norm <= bound) return g;
  return g * (bound / norm);
}

Vector StochasticQuadratic::minibatch_grad(
    int client, const Vector& w, const std::vector<Index>& rows) const {
  const auto& terms = sample_terms[static_cast<std::size_t>(client)];
  Vector b = Vector::Zero(w.size());
  for (Index r : rows) b += terms[static_cast<std::size_t>(r)];
  b /= static_cast<double>(rows.size());
  return base.hessians[static_cast<std::size_t>(client)] * w - b;
}

StochasticQuadratic random_stochastic_quadratic(int n_clients, Index dim,
                                                Index samples_per_client,
                                                double sample_spread,
                                                double ridge, RngStream& rng) {
  require(samples_per_client >= 1,
          "random_stochastic_quadratic: need at least one sample per client");
  StochasticQuadratic out;
  QuadraticProblem shell = random_quadratic(n_clients, dim, ridge, 0.0, rng);
  std::vector<Vector> client_means;
  out.sample_terms.resize(static_cast<std::size_t>(n_clients));
  for (int i = 0; i < n_clients; ++i) {
    auto& terms = out.sample_terms[static_cast<std::size_t>(i)];
    terms.reserve(static_cast<std::size_t>(samples_per_client));
    Vector mean = Vector::Zero(dim);
    for (Index j = 0; j < samples_per_client; ++j) {
      Vector b(dim);
      for (Index r = 0; r < dim; ++r) b[r] = sample_spread * normal_draw(rng);
      mean += b;
      terms.push_back(std::move(b));
    }
    client_means.push_back(mean / static_cast<double>(samples_per_client));
  }
  out.base = QuadraticProblem::create(std::move(shell.hessians),
                                      std::move(client_means));
  return out;
}

namespace {

std::vector<Index> minibatch_rows(Index m, Index b, RngStream& rng) {
  if (b >= m) {
    std::vector<Index> all(static_cast<std::size_t>(m));
    for (Index i = 0; i < m; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(b));
  for (std::int64_t v : sample_distinct(m, b, rng)) rows.push_back(v);
  return rows;
}

}  // namespace

double suggest_clip_bound(const StochasticQuadratic& problem,
                          const PrivacyBudget& budget, const Vector& start,
                          int calibration_rounds, std::uint64_t seed) {
  require(calibration_rounds >= 1, "suggest_clip_bound: need rounds");
  const int n = problem.base.n_clients();
  const Index d = problem.base.dim();
  const Index m = problem.samples_per_client();
  std::vector<double> norms;
  Vector w = start;
  for (int k = 0; k < calibration_rounds; ++k) {
    Vector next = Vector::Zero(d);
    for (int i = 0; i < n; ++i) {
      RngStream rng = derive_stream(seed, static_cast<std::uint64_t>(k),
                                    static_cast<std::uint64_t>(i),
                                    stream_tag::kMinibatch);
      const Vector g =
          problem.minibatch_grad(i, w, minibatch_rows(m, budget.minibatch, rng));
      norms.push_back(g.norm());
      next += w - 0.5 / budget.smoothness * g;
    }
    w = next / static_cast<double>(n);
  }
  std::sort(norms.begin(), norms.end());
  const std::size_t idx = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(norms.size()) - 1.0,
                       std::ceil(0.99 * static_cast<double>(norms.size()))));
  return std::max(norms[idx], 1e-12);
}

LdpRunResult run_ldp_fedp3(const StochasticQuadratic& problem,
                           const PrivacyBudget& budget, const Vector& start,
                           const LdpRunOptions& options) {
  budget.validate();
  const QuadraticProblem& base = problem.base;
  const int n = base.n_clients();
  const Index d = base.dim();
  const Index m = problem.samples_per_client();
  require(m == budget.samples_per_client,
          "run_ldp_fedp3: budget m does not match the problem's shard size");
  require(d % n == 0,
          "run_ldp_fedp3: dim must be divisible by the client count for the "
          "aggregation sketches; zero-pad first");
  require_shape(start.size() == d, "run_ldp_fedp3: start has wrong length");
  require(options.n_seeds >= 1, "run_ldp_fedp3: need at least one seed");

  LdpRunResult result;
  result.delta0 = quad_global_value(base, start) - quad_f_inf(base);
  result.schedule = ldp_schedule(budget, result.delta0, d);
  const int iterations = static_cast<int>(
      options.iterations_override.value_or(result.schedule.iterations));
  require(iterations >= 1, "run_ldp_fedp3: schedule produced no iterations");
  const double gamma =
      options.step_override.value_or(result.schedule.step_size);
  result.sigma2 =
      options.sigma2_override.value_or(
          calibrate_sigma(budget, iterations, d).variance);
  const double sigma = std::sqrt(result.sigma2);
  const Index batch = options.force_full_batch ? m : budget.minibatch;
  result.rounds = static_cast<std::uint64_t>(iterations);
  result.comm_cost = 0;

  const int stride =
      options.trajectory_stride > 0
          ? options.trajectory_stride
          : std::max(1, iterations / 500);

  double mean_stat = 0.0, m2 = 0.0;
  int within = 0;
  for (int s = 0; s < options.n_seeds; ++s) {
    const std::uint64_t run_seed =
        splitmix64(options.seed + static_cast<std::uint64_t>(s));
    Vector w = start;
    double grad_sq_sum = 0.0;
    for (int k = 0; k < iterations; ++k) {
      const double gsq = quad_global_grad(base, w).squaredNorm();
      grad_sq_sum += gsq;
      if (s == 0 && (k % stride == 0 || k + 1 == iterations)) {
        result.traj_rounds.push_back(k);
        result.traj_f.push_back(quad_global_value(base, w));
        result.traj_grad_sq.push_back(gsq);
      }

      RngStream perm_rng = derive_stream(run_seed,
                                         static_cast<std::uint64_t>(k), 0,
                                         stream_tag::kPermutation);
      const auto sketches = sample_perm_sketches(d, n, perm_rng);
      Vector next = Vector::Zero(d);
      for (int i = 0; i < n; ++i) {
        RngStream batch_rng = derive_stream(run_seed,
                                            static_cast<std::uint64_t>(k),
                                            static_cast<std::uint64_t>(i),
                                            stream_tag::kMinibatch);
        Vector g =
            problem.minibatch_grad(i, w, minibatch_rows(m, batch, batch_rng));
        if (!std::isfinite(g.norm())) {
          // Clipping an overflowed norm would silently zero the update.
          throw DivergedError("run_ldp_fedp3: local gradient overflowed", k,
                              -1);
        }
        g = clip_gradient(g, budget.grad_bound);
        if (sigma > 0.0) {
          // Gaussian mechanism on the clipped gradient; the perturbation
          // enters the iterate scaled by gamma, which is the dynamics the
          // convergence schedule is calibrated for.
          RngStream noise_rng = derive_stream(run_seed,
                                              static_cast<std::uint64_t>(k),
                                              static_cast<std::uint64_t>(i),
                                              stream_tag::kNoise);
          for (Index r = 0; r < d; ++r) g[r] += sigma * normal_draw(noise_rng);
        }
        const Vector u = w - gamma * g;
        next += apply_perm_sketch(sketches[static_cast<std::size_t>(i)], u);
      }
      w = next / static_cast<double>(n);
      if (!w.allFinite()) {
        throw DivergedError("run_ldp_fedp3: iterate blew up", k, -1);
      }
      if (s == 0) {
        result.comm_cost += static_cast<std::uint64_t>(d);  // n * (d/n)
      }
    }
    const double stat = grad_sq_sum / static_cast<double>(iterations);
    result.mean_grad_sq_per_seed.push_back(stat);
    if (stat <= result.schedule.stationarity_bound + 1e-9) ++within;
    const double delta = stat - mean_stat;
    mean_stat += delta / static_cast<double>(s + 1);
    m2 += delta * (stat - mean_stat);
  }

  BoundCertificate cert;
  cert.name = "ldp_fedp3";
  cert.lhs = mean_stat;
  cert.rhs = result.schedule.stationarity_bound;
  cert.stat_margin =
      options.n_seeds > 1
          ? 3.0 * std::sqrt(m2 / static_cast<double>(options.n_seeds - 1) /
                            static_cast<double>(options.n_seeds))
          : 0.0;
  cert.satisfied = cert.lhs <= cert.rhs + cert.stat_margin + 1e-9;
  cert.seed_fraction_within =
      static_cast<double>(within) / static_cast<double>(options.n_seeds);
  cert.constants = {{"epsilon", budget.epsilon},
                    {"delta", budget.delta},
                    {"m", static_cast<double>(budget.samples_per_client)},
                    {"b", static_cast<double>(batch)},
                    {"clip", budget.grad_bound},
                    {"c", budget.calibration_c},
                    {"smoothness", budget.smoothness},
                    {"sigma2", result.sigma2},
                    {"gamma", gamma},
                    {"iterations", static_cast<double>(iterations)},
                    {"delta0", result.delta0},
                    {"dim", static_cast<double>(d)},
                    {"gate_ok", result.schedule.gate_ok ? 1.0 : 0.0},
                    {"seeds", static_cast<double>(options.n_seeds)}};
  result.certificate = std::move(cert);
  return result;
}

LdpCommCost ldp_comm_cost(const PrivacyBudget& budget, double delta0,
                          Index dim) {
  const LdpSchedule sched = ldp_schedule(budget, delta0, dim);
  LdpCommCost out;
  out.cost = static_cast<std::uint64_t>(dim) *
             static_cast<std::uint64_t>(sched.iterations);
  const double m = static_cast<double>(budget.samples_per_client);
  const double log_term = std::log(1.0 / budget.delta);
  out.term_gradient = m * budget.epsilon *
                      std::sqrt(static_cast<double>(dim) * budget.smoothness *
                                delta0) /
                      (budget.grad_bound * std::sqrt(log_term));
  out.term_privacy = m * m * budget.epsilon * budget.epsilon / log_term;
  return out;
}

}  // namespace fedp3
