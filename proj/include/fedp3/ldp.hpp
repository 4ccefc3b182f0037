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
#include <optional>
#include <vector>

#include "fedp3/common.hpp"
#include "fedp3/objective.hpp"
#include "fedp3/rng.hpp"
#include "fedp3/theory.hpp"

namespace fedp3 {

// Locally differentially private variant of the aggregation-sketch dynamics:
// minibatch local steps, gradient clipping, Gaussian perturbation calibrated
// from the privacy budget, permutation-sketched uploads.

struct PrivacyBudget {
  double epsilon = 1.0;
  double delta = 0.01;
  Index samples_per_client = 100;  // m
  Index minibatch = 48;            // b
  double grad_bound = 1.0;         // C
  double calibration_c = 1.0;      // the accountant constant c
  double gate_c_prime = 1.0;       // c' in the eps < c' q^2 K validity gate
  double smoothness = 1.0;         // uniform L across clients

  double sampling_rate() const {
    return static_cast<double>(minibatch) /
           static_cast<double>(samples_per_client);
  }
  void validate() const;
};

struct NoiseSpec {
  double variance = 0.0;  // per-coordinate sigma^2
  Index dim = 0;
};

/// sigma^2 = c C^2 K log(1/delta) / (m^2 eps^2). (The statement-level
/// log(1/eps) variant is a typo; the proof calibrates with log(1/delta).)
NoiseSpec calibrate_sigma(const PrivacyBudget& budget, int iterations,
                          Index dim);

struct LdpSchedule {
  std::int64_t iterations = 0;       // K
  double step_size = 0.0;            // gamma
  double stationarity_bound = 0.0;   // 2 C sqrt(L c d log(1/delta)) / (m eps)
  bool gate_ok = true;               // eps < c' q^2 K
  double k_branch_gradient = 0.0;    // m eps sqrt(L Delta0) / (C sqrt(c d log(1/delta)))
  double k_branch_privacy = 0.0;     // m^2 eps^2 / (c d log(1/delta))
};

/// The certified iteration count K (rounded up) and gamma, plus the bound on the
/// average squared gradient norm.
LdpSchedule ldp_schedule(const PrivacyBudget& budget, double delta0, Index dim);

/// g when ||g|| <= bound, else g * bound / ||g||.
Vector clip_gradient(const Vector& g, double bound);

/// Finite-sum quadratic testbed: per client, f_i is the mean of m samples
/// f_{i,j}(w) = 1/2 w' L_i w - w' b_{i,j}, so minibatch gradients are
/// unbiased with minibatch-only noise in the linear term.
struct StochasticQuadratic {
  QuadraticProblem base;                          // client-level means
  std::vector<std::vector<Vector>> sample_terms;  // [client][sample] -> b_{i,j}

  Index samples_per_client() const {
    return static_cast<Index>(sample_terms.front().size());
  }
  /// Minibatch stochastic gradient at w for `client` over sample `rows`.
  Vector minibatch_grad(int client, const Vector& w,
                        const std::vector<Index>& rows) const;
};

StochasticQuadratic random_stochastic_quadratic(int n_clients, Index dim,
                                                Index samples_per_client,
                                                double sample_spread,
                                                double ridge, RngStream& rng);

/// 99th-percentile minibatch gradient norm over a short calibration run with
/// no clipping and no noise; the default choice for the clip bound C.
double suggest_clip_bound(const StochasticQuadratic& problem,
                          const PrivacyBudget& budget, const Vector& start,
                          int calibration_rounds, std::uint64_t seed);

struct LdpRunOptions {
  int n_seeds = 1;
  std::uint64_t seed = 0;
  std::optional<double> sigma2_override;    // testing: force the noise level
  std::optional<int> iterations_override;   // testing: shorten the schedule
  std::optional<double> step_override;      // testing
  bool force_full_batch = false;            // testing: b = m
  int trajectory_stride = 0;  // 0: auto (~500 rows); else every k-th round
};

struct LdpRunResult {
  LdpSchedule schedule;
  double sigma2 = 0.0;
  double delta0 = 0.0;
  BoundCertificate certificate;   // avg squared gradient vs certified bound
  std::uint64_t comm_cost = 0;    // d * K, accumulated d per round
  std::uint64_t rounds = 0;
  std::vector<double> mean_grad_sq_per_seed;  // (1/K) sum_k ||grad f(w^k)||^2
  // Sub-sampled trajectory of the first seed for CSV emission.
  std::vector<std::int64_t> traj_rounds;
  std::vector<double> traj_f;
  std::vector<double> traj_grad_sq;
};

/// Runs K rounds per seed: minibatch gradient, clip to C, Gaussian
/// perturbation N(0, sigma^2 I) on the clipped gradient, step gamma, sketch,
/// server mean (so the noise reaches the iterate scaled by gamma, the
/// dynamics the schedule is calibrated for). Records
/// (1/K) sum ||grad f(w^k)||^2 against the schedule's stationarity bound.
LdpRunResult run_ldp_fedp3(const StochasticQuadratic& problem,
                           const PrivacyBudget& budget, const Vector& start,
                           const LdpRunOptions& options = {});

struct LdpCommCost {
  std::uint64_t cost = 0;        // d * K exactly
  double term_gradient = 0.0;    // m eps sqrt(d L Delta0) / (C sqrt(log(1/delta)))
  double term_privacy = 0.0;     // m^2 eps^2 / log(1/delta)
};

LdpCommCost ldp_comm_cost(const PrivacyBudget& budget, double delta0,
                          Index dim);

}  // namespace fedp3
