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
#include "fedp3/objective.hpp"
#include "fedp3/rng.hpp"
#include "fedp3/sketch.hpp"

namespace fedp3 {

// Analyzable sketch dynamics on quadratics plus numeric certification of the
// convergence bounds they satisfy.

struct ISTConfig {
  const QuadraticProblem* problem = nullptr;
  int iterations = 100;                  // K
  double step_size = 0.0;                // gamma
  std::optional<double> keep_ratio;      // global pruning; nullopt = off
  bool aggregation_sketch = true;        // permutation sketches on uploads
  std::uint64_t seed = 0;
  Vector start;                          // w^0
};

struct ISTTrajectory {
  std::vector<double> f_values;   // f(w^k), k = 0..K
  std::vector<double> grad_sq;    // ||grad f(w^k)||^2, k = 0..K
  std::vector<Vector> iterates;   // w^0..w^K
  std::uint64_t up_scalars_per_round = 0;
  std::uint64_t up_scalars_cum = 0;
  std::uint64_t down_scalars_per_round = 0;
  std::uint64_t down_scalars_cum = 0;
};

/// One round: u_i = P_i w - gamma P_i grad f_i(P_i w), v_i = S_i u_i,
/// w <- mean_i v_i. With pruning off this is the aggregation-only update
/// w <- (1/n) sum_i S_i (w - gamma grad f_i(w)); with the sketch off as well
/// it degenerates to distributed gradient descent.
ISTTrajectory run_ist(const ISTConfig& config);

/// Full-model distributed gradient descent baseline: exact gradient step on
/// the mean objective, full upload and download every round.
ISTTrajectory run_dgd(const QuadraticProblem& problem, double step_size,
                      int iterations, const Vector& start);

struct AggregationBound {
  double exact = 0.0;       // 2 (1 + Lbar Lmax g^2)^K / (g K) * Delta0
  double simplified = 0.0;  // 6 Delta0 / (g K)
  double max_step = 0.0;    // min{1/Lmax, 1/sqrt(Lbar Lmax K)}
};

/// Closed-form right-hand side of the model-aggregation bound. Throws when
/// the step size exceeds min{1/Lmax, 1/sqrt(Lbar Lmax K)} (the message names
/// the largest admissible step).
AggregationBound aggregation_bound(double delta0, double l_bar,
                                   double l_max, double gamma,
                                   int iterations);

/// Measured statistic vs. closed-form bound, plus everything needed to audit
/// the comparison. satisfied holds when lhs <= rhs + stat_margin + 1e-9.
struct BoundCertificate {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double stat_margin = 0.0;  // Monte Carlo allowance (3 standard errors)
  bool satisfied = false;
  double seed_fraction_within = 1.0;  // share of seeds meeting rhs per-seed
  std::map<std::string, double> constants;
};

/// Monte Carlo check of the model-aggregation bound: runs the sketch
/// dynamics for n_seeds seeds, takes min_k of the per-iterate seed means and
/// compares against aggregation_bound at gamma = min{1/Lmax, 1/sqrt(LbarLmaxK)}.
BoundCertificate certify_aggregation_bound(const QuadraticProblem& problem,
                                            const Vector& start,
                                            int iterations, int n_seeds,
                                            std::uint64_t seed);

struct CommComparison {
  std::uint64_t k_fedp3 = 0;     // ceil(36 Delta0^2 / (Lbar Lmax eps^2))
  std::uint64_t k_dgd = 0;       // ceil(2 Lbar Delta0 / eps)
  std::uint64_t k_dgd_smooth = 0;  // ceil(36 Delta0^2 / (Lbar^2 eps^2))
  std::uint64_t per_round_fedp3 = 0;  // d
  std::uint64_t per_round_dgd = 0;    // n d
  std::uint64_t cost_fedp3 = 0;
  std::uint64_t cost_dgd = 0;
  std::uint64_t cost_dgd_smooth = 0;
  double ratio = 0.0;         // cost_dgd / cost_fedp3
  double ratio_smooth = 0.0;  // cost_dgd_smooth / cost_fedp3
};

/// Iteration counts and total communication from the closed forms, at target
/// stationarity eps, starting point `start`.
CommComparison comm_comparison(const QuadraticProblem& problem, double eps,
                               const Vector& start);

/// Ingredients of the global-pruning certificate. Expectations are over the
/// iid Bernoulli(keep_ratio) coordinate masks of all clients jointly.
struct PruningAnalysis {
  Matrix w_matrix;      // W = sym(E[P Lbar B]), the proof's curvature matrix
  Matrix expected_blb;  // E[B Lbar B]
  bool w_psd = false;
  bool theta_finite = false;  // E[B Lbar B] vanishes on W's null space
  double theta = 0.0;         // smallest theta with E[B Lbar B] <= theta W
  double pencil_gap = 0.0;    // lambda_min(theta W - E[B Lbar B])
  double h_estimate = 0.0;    // doubled empirical excess of f(P w) / f(w)
  double keep_ratio = 1.0;
  bool certificate_ok() const { return w_psd && theta_finite; }
};

enum class ExpectationMode { kExhaustive, kMonteCarlo };

/// Requires all linear terms zero (the interpolation regime). Exhaustive
/// enumeration covers outcome spaces up to 2^16 atoms; larger spaces must use
/// Monte Carlo.
PruningAnalysis pruning_certificate(const QuadraticProblem& problem,
                                    double keep_ratio, ExpectationMode mode,
                                    int mc_samples, std::uint64_t seed);

/// Runs the pruned dynamics w <- P w - gamma B w for n_seeds seeds at
/// gamma = min{sqrt(ln 2 / (h K)), 1/theta} and compares the weighted
/// gradient statistic sum_k p_k ||grad f(w^k)||^2_{Lbar^-1 W Lbar^-1},
/// p_k = a^(K-k-1)/S_K with a = 1 + gamma^2 h, against 4 Delta0 / (gamma K).
/// gamma_override (tests only) must not exceed the certified step.
BoundCertificate run_pruned_ist_and_certify(
    const QuadraticProblem& problem, const PruningAnalysis& analysis,
    const Vector& start, int iterations, int n_seeds, std::uint64_t seed,
    std::optional<double> gamma_override = std::nullopt);

/// Weighted-recursion weights p_k = a^(K-k-1) / S_K, S_K = sum of the same.
std::vector<double> recursion_weights(double a, int iterations);

}  // namespace fedp3
