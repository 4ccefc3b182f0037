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

#include "fedp3/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fedp3 {

ISTTrajectory run_ist(const ISTConfig& config) {
  require(config.problem != nullptr, "run_ist: config needs a problem");
  const QuadraticProblem& p = *config.problem;
  const int n = p.n_clients();
  const Index d = p.dim();
  require_shape(config.start.size() == d, "run_ist: start has wrong length");
  require(config.step_size >= 0.0, "run_ist: negative step size");
  require(config.iterations >= 1, "run_ist: need at least one iteration");
  if (config.aggregation_sketch) {
    require(d % n == 0,
            "run_ist: dim must be divisible by the client count when "
            "aggregation sketches are on; zero-pad the problem first");
  }
  if (config.keep_ratio) {
    require(*config.keep_ratio > 0.0 && *config.keep_ratio <= 1.0,
            "run_ist: keep_ratio must lie in (0, 1]");
  }

  ISTTrajectory traj;
  traj.up_scalars_per_round = config.aggregation_sketch
                                  ? static_cast<std::uint64_t>(d)
                                  : static_cast<std::uint64_t>(d) *
                                        static_cast<std::uint64_t>(n);
  traj.down_scalars_per_round =
      static_cast<std::uint64_t>(d) * static_cast<std::uint64_t>(n);

  Vector w = config.start;
  auto record = [&](const Vector& x) {
    traj.iterates.push_back(x);
    traj.f_values.push_back(quad_global_value(p, x));
    traj.grad_sq.push_back(quad_global_grad(p, x).squaredNorm());
  };
  record(w);

  for (int k = 0; k < config.iterations; ++k) {
    std::vector<PermSketch> sketches;
    if (config.aggregation_sketch) {
      RngStream perm_rng = derive_stream(config.seed,
                                         static_cast<std::uint64_t>(k), 0,
                                         stream_tag::kPermutation);
      sketches = sample_perm_sketches(d, n, perm_rng);
    }
    Vector next = Vector::Zero(d);
    for (int i = 0; i < n; ++i) {
      Vector u;
      if (config.keep_ratio) {
        RngStream mask_rng = derive_stream(config.seed,
                                           static_cast<std::uint64_t>(k),
                                           static_cast<std::uint64_t>(i),
                                           stream_tag::kPruningMask);
        const PruningMask mask =
            sample_pruning_mask(d, *config.keep_ratio, mask_rng);
        const Vector pw = apply_mask(mask, w);
        u = pw - config.step_size *
                     apply_mask(mask, quad_local_grad(p, i, pw));
      } else {
        u = w - config.step_size * quad_local_grad(p, i, w);
      }
      next += config.aggregation_sketch
                  ? apply_perm_sketch(sketches[static_cast<std::size_t>(i)], u)
                  : u;
    }
    w = next / static_cast<double>(n);
    if (!w.allFinite() || w.squaredNorm() > 1e300) {
      throw DivergedError("run_ist: iterate blew up", k, -1);
    }
    traj.up_scalars_cum += traj.up_scalars_per_round;
    traj.down_scalars_cum += traj.down_scalars_per_round;
    record(w);
  }
  return traj;
}

ISTTrajectory run_dgd(const QuadraticProblem& problem, double step_size,
                      int iterations, const Vector& start) {
  ISTConfig cfg;
  cfg.problem = &problem;
  cfg.iterations = iterations;
  cfg.step_size = step_size;
  cfg.aggregation_sketch = false;
  cfg.start = start;
  return run_ist(cfg);
}

AggregationBound aggregation_bound(double delta0, double l_bar,
                                   double l_max, double gamma,
                                   int iterations) {
  require(delta0 >= 0.0, "aggregation_bound: Delta0 must be nonnegative");
  require(l_bar > 0.0 && l_max > 0.0,
          "aggregation_bound: smoothness constants must be positive");
  require(gamma > 0.0, "aggregation_bound: step size must be positive");
  require(iterations >= 1, "aggregation_bound: need at least one iteration");
  const double k = static_cast<double>(iterations);
  const double max_step =
      std::min(1.0 / l_max, 1.0 / std::sqrt(l_bar * l_max * k));
  require(gamma <= max_step * (1.0 + 1e-12),
          "aggregation_bound: step size exceeds the admissible maximum " +
              std::to_string(max_step));
  AggregationBound out;
  out.max_step = max_step;
  out.exact = 2.0 * std::pow(1.0 + l_bar * l_max * gamma * gamma, k) /
              (gamma * k) * delta0;
  out.simplified = 6.0 * delta0 / (gamma * k);
  return out;
}

BoundCertificate certify_aggregation_bound(const QuadraticProblem& problem,
                                            const Vector& start,
                                            int iterations, int n_seeds,
                                            std::uint64_t seed) {
  require(n_seeds >= 2, "certify_aggregation_bound: need at least two seeds");
  const SmoothnessConstants sc = smoothness_constants(problem);
  const double k = static_cast<double>(iterations);
  const double gamma =
      std::min(1.0 / sc.max, 1.0 / std::sqrt(sc.mean * sc.max * k));
  const double delta0 =
      quad_global_value(problem, start) - quad_f_inf(problem);
  const AggregationBound bound =
      aggregation_bound(delta0, sc.mean, sc.max, gamma, iterations);

  // Per-iterate mean and variance of the squared gradient norm across seeds.
  std::vector<double> mean(static_cast<std::size_t>(iterations), 0.0);
  std::vector<double> m2(static_cast<std::size_t>(iterations), 0.0);
  for (int s = 0; s < n_seeds; ++s) {
    ISTConfig cfg;
    cfg.problem = &problem;
    cfg.iterations = iterations;
    cfg.step_size = gamma;
    cfg.aggregation_sketch = true;
    cfg.seed = splitmix64(seed + static_cast<std::uint64_t>(s));
    cfg.start = start;
    const ISTTrajectory traj = run_ist(cfg);
    for (int j = 0; j < iterations; ++j) {
      const double x = traj.grad_sq[static_cast<std::size_t>(j)];
      const double delta = x - mean[static_cast<std::size_t>(j)];
      mean[static_cast<std::size_t>(j)] += delta / static_cast<double>(s + 1);
      m2[static_cast<std::size_t>(j)] +=
          delta * (x - mean[static_cast<std::size_t>(j)]);
    }
  }
  std::size_t argmin = 0;
  for (std::size_t j = 1; j < mean.size(); ++j) {
    if (mean[j] < mean[argmin]) argmin = j;
  }
  const double se = std::sqrt(
      m2[argmin] / static_cast<double>(n_seeds - 1) /
      static_cast<double>(n_seeds));

  BoundCertificate cert;
  cert.name = "model_aggregation";
  cert.lhs = mean[argmin];
  cert.rhs = bound.exact;
  cert.stat_margin = 3.0 * se;
  cert.satisfied = cert.lhs <= cert.rhs + cert.stat_margin + 1e-9;
  cert.constants = {{"delta0", delta0},
                    {"l_bar", sc.mean},
                    {"l_max", sc.max},
                    {"gamma", gamma},
                    {"iterations", k},
                    {"seeds", static_cast<double>(n_seeds)},
                    {"argmin_k", static_cast<double>(argmin)},
                    {"simplified_rhs", bound.simplified}};
  return cert;
}

CommComparison comm_comparison(const QuadraticProblem& problem, double eps,
                               const Vector& start) {
  require(eps > 0.0, "comm_comparison: eps must be positive");
  const SmoothnessConstants sc = smoothness_constants(problem);
  const double delta0 =
      quad_global_value(problem, start) - quad_f_inf(problem);
  require(delta0 >= 0.0, "comm_comparison: negative optimality gap");
  const double d = static_cast<double>(problem.dim());
  const double n = static_cast<double>(problem.n_clients());

  CommComparison out;
  out.k_fedp3 = static_cast<std::uint64_t>(
      std::ceil(36.0 * delta0 * delta0 / (sc.mean * sc.max * eps * eps)));
  out.k_dgd =
      static_cast<std::uint64_t>(std::ceil(2.0 * sc.mean * delta0 / eps));
  out.k_dgd_smooth = static_cast<std::uint64_t>(
      std::ceil(36.0 * delta0 * delta0 / (sc.mean * sc.mean * eps * eps)));
  out.k_fedp3 = std::max<std::uint64_t>(out.k_fedp3, 1);
  out.k_dgd = std::max<std::uint64_t>(out.k_dgd, 1);
  out.k_dgd_smooth = std::max<std::uint64_t>(out.k_dgd_smooth, 1);
  out.per_round_fedp3 = static_cast<std::uint64_t>(d);
  out.per_round_dgd = static_cast<std::uint64_t>(n * d);
  out.cost_fedp3 = out.per_round_fedp3 * out.k_fedp3;
  out.cost_dgd = out.per_round_dgd * out.k_dgd;
  out.cost_dgd_smooth = out.per_round_dgd * out.k_dgd_smooth;
  out.ratio = static_cast<double>(out.cost_dgd) /
              static_cast<double>(out.cost_fedp3);
  out.ratio_smooth = static_cast<double>(out.cost_dgd_smooth) /
                     static_cast<double>(out.cost_fedp3);
  return out;
}

namespace {

/// B = (1/n) sum_i P_i L_i P_i for one joint mask outcome; masks arrive as a
/// bit pattern per client.
Matrix masked_mean_hessian(const QuadraticProblem& p,
                           const std::vector<std::uint64_t>& mask_bits) {
  const Index d = p.dim();
  Matrix b = Matrix::Zero(d, d);
  for (int i = 0; i < p.n_clients(); ++i) {
    const std::uint64_t bits = mask_bits[static_cast<std::size_t>(i)];
    const Matrix& l = p.hessians[static_cast<std::size_t>(i)];
    for (Index r = 0; r < d; ++r) {
      if (!((bits >> r) & 1)) continue;
      for (Index c = 0; c < d; ++c) {
        if (!((bits >> c) & 1)) continue;
        b(r, c) += l(r, c);
      }
    }
  }
  return b / static_cast<double>(p.n_clients());
}

Vector mean_mask_indicator(const std::vector<std::uint64_t>& mask_bits,
                           Index d, int n) {
  Vector ind = Vector::Zero(d);
  for (int i = 0; i < n; ++i) {
    for (Index r = 0; r < d; ++r) {
      if ((mask_bits[static_cast<std::size_t>(i)] >> r) & 1) ind[r] += 1.0;
    }
  }
  return ind / static_cast<double>(n);
}

}  // namespace

PruningAnalysis pruning_certificate(const QuadraticProblem& problem,
                                    double keep_ratio, ExpectationMode mode,
                                    int mc_samples, std::uint64_t seed) {
  const Index d = problem.dim();
  const int n = problem.n_clients();
  require(keep_ratio > 0.0 && keep_ratio <= 1.0,
          "pruning_certificate: keep_ratio must lie in (0, 1]");
  for (const Vector& b : problem.linear_terms) {
    require(b.isZero(0.0),
            "pruning_certificate: requires the interpolation regime "
            "(all linear terms zero)");
  }
  const Matrix l_bar = problem.mean_hessian();

  Matrix mean_plb = Matrix::Zero(d, d);  // E[P Lbar B]
  Matrix mean_blb = Matrix::Zero(d, d);  // E[B Lbar B]

  if (mode == ExpectationMode::kExhaustive) {
    const long bits_total = static_cast<long>(n) * static_cast<long>(d);
    require(bits_total <= 16,
            "pruning_certificate: exhaustive mode is limited to n*d <= 16 "
            "(2^16 outcome atoms); use Monte Carlo instead");
    const std::uint64_t atoms = 1ULL << bits_total;
    std::vector<std::uint64_t> mask_bits(static_cast<std::size_t>(n));
    for (std::uint64_t outcome = 0; outcome < atoms; ++outcome) {
      double prob = 1.0;
      for (int i = 0; i < n; ++i) {
        const std::uint64_t bits =
            (outcome >> (static_cast<std::uint64_t>(i) *
                         static_cast<std::uint64_t>(d))) &
            ((1ULL << d) - 1);
        mask_bits[static_cast<std::size_t>(i)] = bits;
        for (Index r = 0; r < d; ++r) {
          prob *= ((bits >> r) & 1) ? keep_ratio : 1.0 - keep_ratio;
        }
      }
      if (prob == 0.0) continue;
      const Matrix b = masked_mean_hessian(problem, mask_bits);
      const Vector pdiag = mean_mask_indicator(mask_bits, d, n);
      const Matrix plb = pdiag.asDiagonal() * (l_bar * b);
      mean_plb += prob * plb;
      mean_blb += prob * (b * l_bar * b);
    }
  } else {
    require(mc_samples >= 1, "pruning_certificate: need Monte Carlo samples");
    RngStream rng = derive_stream(seed, stream_tag::kPruningMask);
    std::vector<std::uint64_t> mask_bits(static_cast<std::size_t>(n));
    for (int s = 0; s < mc_samples; ++s) {
      for (int i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        for (Index r = 0; r < d; ++r) {
          if (uniform_real(rng) < keep_ratio) bits |= 1ULL << r;
        }
        mask_bits[static_cast<std::size_t>(i)] = bits;
      }
      const Matrix b = masked_mean_hessian(problem, mask_bits);
      const Vector pdiag = mean_mask_indicator(mask_bits, d, n);
      mean_plb += pdiag.asDiagonal() * (l_bar * b);
      mean_blb += b * l_bar * b;
    }
    mean_plb /= static_cast<double>(mc_samples);
    mean_blb /= static_cast<double>(mc_samples);
  }

  PruningAnalysis analysis;
  analysis.keep_ratio = keep_ratio;
  // The recursion only sees the quadratic form of E[P Lbar B], so W is its
  // symmetric part; that is also what makes W well defined as a matrix norm.
  analysis.w_matrix = 0.5 * (mean_plb + mean_plb.transpose());
  analysis.expected_blb = 0.5 * (mean_blb + mean_blb.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> es(analysis.w_matrix);
  const Vector evals = es.eigenvalues();
  const double lmax = std::max(evals.cwiseAbs().maxCoeff(), 1e-300);
  analysis.w_psd = evals.minCoeff() >= -1e-8 * std::max(1.0, lmax);

  // theta from the pencil restricted to W's range (1e-8 rank cutoff).
  const double cutoff = 1e-8 * lmax;
  std::vector<Index> range_idx, null_idx;
  for (Index j = 0; j < evals.size(); ++j) {
    (evals[j] > cutoff ? range_idx : null_idx).push_back(j);
  }
  analysis.theta_finite = true;
  for (Index j : null_idx) {
    const Vector z = es.eigenvectors().col(j);
    if (z.dot(analysis.expected_blb * z) > 1e-8 * std::max(1.0, lmax)) {
      analysis.theta_finite = false;
    }
  }
  if (analysis.theta_finite && !range_idx.empty()) {
    Matrix u(d, static_cast<Index>(range_idx.size()));
    for (std::size_t c = 0; c < range_idx.size(); ++c) {
      u.col(static_cast<Index>(c)) =
          es.eigenvectors().col(range_idx[c]) /
          std::sqrt(evals[range_idx[c]]);
    }
    const Matrix pencil = u.transpose() * analysis.expected_blb * u;
    Eigen::SelfAdjointEigenSolver<Matrix> pes(
        0.5 * (pencil + pencil.transpose()), Eigen::EigenvaluesOnly);
    analysis.theta = std::max(pes.eigenvalues().maxCoeff(), 0.0);
    const Matrix gap = analysis.theta * analysis.w_matrix -
                       analysis.expected_blb;
    Eigen::SelfAdjointEigenSolver<Matrix> ges(0.5 * (gap + gap.transpose()),
                                              Eigen::EigenvaluesOnly);
    analysis.pencil_gap = ges.eigenvalues().minCoeff();
  }

  // Empirical h: largest excess of f(P w) over f(w) across sampled mask/point
  // pairs, doubled as a safety margin. Zero when pruning never inflates f
  // (keep_ratio 1 in particular).
  RngStream h_rng = derive_stream(seed, stream_tag::kInit);
  double worst = 0.0;
  const int h_samples = 10000;
  for (int s = 0; s < h_samples; ++s) {
    Vector w(d);
    for (Index r = 0; r < d; ++r) w[r] = normal_draw(h_rng);
    const double fw = quad_global_value(problem, w);
    if (fw <= 1e-12) continue;
    const PruningMask mask = sample_pruning_mask(d, keep_ratio, h_rng);
    const Vector pw = apply_mask(mask, w);
    const double ratio = quad_global_value(problem, pw) / fw;
    worst = std::max(worst, ratio - 1.0);
  }
  analysis.h_estimate = 2.0 * worst;
  return analysis;
}

std::vector<double> recursion_weights(double a, int iterations) {
  require(a >= 1.0, "recursion_weights: a must be >= 1");
  require(iterations >= 1, "recursion_weights: need at least one iteration");
  std::vector<double> weights(static_cast<std::size_t>(iterations));
  // a^(K-(k+1)) for k = 0..K-1, normalized.
  double total = 0.0;
  for (int k = 0; k < iterations; ++k) {
    weights[static_cast<std::size_t>(k)] =
        std::pow(a, static_cast<double>(iterations - k - 1));
    total += weights[static_cast<std::size_t>(k)];
  }
  for (double& w : weights) w /= total;
  return weights;
}

BoundCertificate run_pruned_ist_and_certify(
    const QuadraticProblem& problem, const PruningAnalysis& analysis,
    const Vector& start, int iterations, int n_seeds, std::uint64_t seed,
    std::optional<double> gamma_override) {
  require(analysis.certificate_ok(),
          "run_pruned_ist_and_certify: the pruning certificate failed "
          "(W not PSD or theta unbounded)");
  require(n_seeds >= 2, "run_pruned_ist_and_certify: need >= 2 seeds");
  const Index d = problem.dim();
  require_shape(start.size() == d,
                "run_pruned_ist_and_certify: start has wrong length");
  const Matrix l_bar = problem.mean_hessian();
  {
    Eigen::SelfAdjointEigenSolver<Matrix> es(l_bar, Eigen::EigenvaluesOnly);
    require(es.eigenvalues().minCoeff() > 1e-12,
            "run_pruned_ist_and_certify: mean Hessian must be positive "
            "definite");
  }

  const double k = static_cast<double>(iterations);
  const double h = analysis.h_estimate;
  const double theta_cap =
      analysis.theta > 0.0 ? 1.0 / analysis.theta
                           : std::numeric_limits<double>::infinity();
  const double h_cap = h > 0.0 ? std::sqrt(std::log(2.0) / (h * k))
                               : std::numeric_limits<double>::infinity();
  double gamma = std::min(theta_cap, h_cap);
  require(std::isfinite(gamma) && gamma > 0.0,
          "run_pruned_ist_and_certify: no admissible step size");
  if (gamma_override) {
    require(*gamma_override > 0.0 && *gamma_override <= gamma * (1.0 + 1e-12),
            "run_pruned_ist_and_certify: step size exceeds the certified "
            "maximum " +
                std::to_string(gamma));
    gamma = *gamma_override;
  }

  const double a = 1.0 + gamma * gamma * h;
  const std::vector<double> weights = recursion_weights(a, iterations);
  const double delta0 = quad_global_value(problem, start);  // f^inf = 0 here
  const double rhs = 4.0 * delta0 / (gamma * k);

  // ||grad f(w)||^2 in the Lbar^-1 W Lbar^-1 norm equals w' W w since
  // grad f(w) = Lbar w in the interpolation regime.
  double mean_stat = 0.0, m2 = 0.0;
  int within = 0;
  for (int s = 0; s < n_seeds; ++s) {
    RngStream rng = derive_stream(splitmix64(seed + static_cast<std::uint64_t>(s)),
                                  stream_tag::kPruningMask);
    Vector w = start;
    double stat = 0.0;
    for (int step = 0; step < iterations; ++step) {
      stat += weights[static_cast<std::size_t>(step)] *
              w.dot(analysis.w_matrix * w);
      Vector next = Vector::Zero(d);
      for (int i = 0; i < problem.n_clients(); ++i) {
        const PruningMask mask =
            sample_pruning_mask(d, analysis.keep_ratio, rng);
        const Vector pw = apply_mask(mask, w);
        next += pw - gamma * apply_mask(
                                 mask,
                                 problem.hessians[static_cast<std::size_t>(i)] *
                                     pw);
      }
      w = next / static_cast<double>(problem.n_clients());
      if (!w.allFinite()) {
        throw DivergedError("pruned dynamics blew up", step, -1);
      }
    }
    if (stat <= rhs + 1e-9) ++within;
    const double delta = stat - mean_stat;
    mean_stat += delta / static_cast<double>(s + 1);
    m2 += delta * (stat - mean_stat);
  }
  const double se = std::sqrt(m2 / static_cast<double>(n_seeds - 1) /
                              static_cast<double>(n_seeds));

  BoundCertificate cert;
  cert.name = "global_pruning";
  cert.lhs = mean_stat;
  cert.rhs = rhs;
  cert.stat_margin = 3.0 * se;
  cert.satisfied = cert.lhs <= cert.rhs + cert.stat_margin + 1e-9;
  cert.seed_fraction_within =
      static_cast<double>(within) / static_cast<double>(n_seeds);
  cert.constants = {{"delta0", delta0},
                    {"gamma", gamma},
                    {"iterations", k},
                    {"theta", analysis.theta},
                    {"h", h},
                    {"a", a},
                    {"keep_ratio", analysis.keep_ratio},
                    {"seeds", static_cast<double>(n_seeds)}};
  return cert;
}

}  // namespace fedp3
