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

#include <cmath>

#include "fedp3/theory.hpp"

using namespace fedp3;

TEST_CASE("run_ist with everything off is exact gradient descent") {
  // Diagonal quadratic: closed form w^k_j = (1 - gamma * l_j)^k w^0_j.
  Matrix l(3, 3);
  l.setZero();
  l.diagonal() << 1.0, 2.0, 4.0;
  const auto p = QuadraticProblem::create({l}, {Vector::Zero(3)});
  ISTConfig cfg;
  cfg.problem = &p;
  cfg.iterations = 20;
  cfg.step_size = 0.1;
  cfg.aggregation_sketch = false;
  cfg.start = Vector::Ones(3);
  const ISTTrajectory traj = run_ist(cfg);
  for (int k = 0; k <= 20; ++k) {
    for (Index j = 0; j < 3; ++j) {
      const double expect =
          std::pow(1.0 - 0.1 * l.diagonal()[j], k);
      CHECK(traj.iterates[static_cast<std::size_t>(k)][j] ==
            doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero step with sketches keeps the iterate fixed") {
  RngStream rng = derive_stream(2);
  const auto p = random_quadratic(2, 4, 0.5, 0.0, rng);
  ISTConfig cfg;
  cfg.problem = &p;
  cfg.iterations = 10;
  cfg.step_size = 0.0;
  cfg.aggregation_sketch = true;
  cfg.seed = 3;
  cfg.start = Vector::Ones(4);
  const ISTTrajectory traj = run_ist(cfg);
  for (const Vector& w : traj.iterates) {
    CHECK((w - cfg.start).cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("one sketched step equals the update-equation identity") {
  RngStream rng = derive_stream(4);
  const auto p = random_quadratic(2, 6, 0.5, 0.5, rng);
  ISTConfig cfg;
  cfg.problem = &p;
  cfg.iterations = 1;
  cfg.step_size = 0.05;
  cfg.aggregation_sketch = true;
  cfg.seed = 11;
  cfg.start = Vector::Ones(6);
  const ISTTrajectory traj = run_ist(cfg);

  RngStream perm_rng = derive_stream(11, 0, 0, stream_tag::kPermutation);
  const auto sketches = sample_perm_sketches(6, 2, perm_rng);
  Vector manual = Vector::Zero(6);
  for (int i = 0; i < 2; ++i) {
    manual += apply_perm_sketch(
        sketches[static_cast<std::size_t>(i)],
        cfg.start - 0.05 * quad_local_grad(p, i, cfg.start));
  }
  manual /= 2.0;
  CHECK((traj.iterates[1] - manual).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("aggregation_bound closed forms") {
  // K = 1: rhs = 2 (1 + LbarLmax g^2) Delta0 / g.
  const AggregationBound b1 = aggregation_bound(2.0, 1.0, 1.0, 0.5, 1);
  CHECK(b1.exact == doctest::Approx(2.0 * 1.25 * 2.0 / 0.5).epsilon(1e-12));

  // gamma at the sqrt gate: exact rhs <= 2 e Delta0 / (g K) <= simplified.
  const int k = 25;
  const double gamma = 1.0 / std::sqrt(1.0 * 1.0 * k);
  const AggregationBound b2 = aggregation_bound(1.0, 1.0, 1.0, gamma, k);
  CHECK(b2.exact <= 2.0 * std::exp(1.0) / (gamma * k) + 1e-12);
  CHECK(b2.exact <= b2.simplified);

  // Direct evaluation: 2 * 1.01^100 / 10 = 0.5409627658843057.
  const AggregationBound b3 = aggregation_bound(1.0, 1.0, 1.0, 0.1, 100);
  CHECK(b3.exact == doctest::Approx(0.5409627658843057).epsilon(1e-12));

  // Step-size gate names the admissible maximum.
  try {
    aggregation_bound(1.0, 1.0, 4.0, 0.3, 100);
    FAIL("expected step-size rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("0.05") != std::string::npos);
  }
}

TEST_CASE("aggregation-bound certificate holds on a random PSD instance") {
  RngStream rng = derive_stream(6);
  const auto p = random_quadratic(4, 8, 0.3, 0.2, rng);
  Vector start(8);
  for (Index j = 0; j < 8; ++j) start[j] = normal_draw(rng);
  const BoundCertificate cert =
      certify_aggregation_bound(p, start, 40, 100, 17);
  CHECK(cert.satisfied);
  CHECK(cert.lhs <= cert.rhs + cert.stat_margin + 1e-9);
}

TEST_CASE("DGD converges linearly on a strongly convex instance") {
  RngStream rng = derive_stream(8);
  const auto p = random_quadratic(3, 6, 1.0, 1.0, rng);
  const auto sc = smoothness_constants(p);
  REQUIRE(sc.max < 2.0 * sc.mean);  // 1/Lbar is then a convergent step
  Vector start(6);
  for (Index j = 0; j < 6; ++j) start[j] = normal_draw(rng);
  const ISTTrajectory traj = run_dgd(p, 1.0 / sc.mean, 30, start);
  const double f_inf = quad_f_inf(p);
  for (std::size_t k = 0; k + 1 < traj.f_values.size(); ++k) {
    const double gap_now = traj.f_values[k] - f_inf;
    const double gap_next = traj.f_values[k + 1] - f_inf;
    CHECK(gap_next < gap_now);
  }
}

TEST_CASE("DGD equals run_ist with sketches off for n = 1") {
  RngStream rng = derive_stream(9);
  const auto p = random_quadratic(1, 5, 0.5, 1.0, rng);
  Vector start(5);
  for (Index j = 0; j < 5; ++j) start[j] = normal_draw(rng);
  const ISTTrajectory a = run_dgd(p, 0.1, 15, start);
  ISTConfig cfg;
  cfg.problem = &p;
  cfg.iterations = 15;
  cfg.step_size = 0.1;
  cfg.aggregation_sketch = false;
  cfg.start = start;
  const ISTTrajectory b = run_ist(cfg);
  for (std::size_t k = 0; k < a.iterates.size(); ++k) {
    CHECK((a.iterates[k] - b.iterates[k]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("communication counters: sketched uploads d, DGD uploads n*d") {
  RngStream rng = derive_stream(10);
  const auto p = random_quadratic(4, 8, 0.5, 0.0, rng);
  ISTConfig cfg;
  cfg.problem = &p;
  cfg.iterations = 7;
  cfg.step_size = 0.01;
  cfg.aggregation_sketch = true;
  cfg.start = Vector::Ones(8);
  const ISTTrajectory ist = run_ist(cfg);
  CHECK(ist.up_scalars_per_round == 8);
  CHECK(ist.up_scalars_cum == 8 * 7);
  const ISTTrajectory dgd = run_dgd(p, 0.01, 7, Vector::Ones(8));
  CHECK(dgd.up_scalars_per_round == 32);
  CHECK(dgd.up_scalars_cum == 32 * 7);
}

TEST_CASE("comm comparison follows the closed forms exactly") {
  // Unit Hessians make every constant 1, so the K formulas are exact
  // integers: K_fedp3 = 36 Delta0^2 / eps^2, K_dgd = 2 Delta0 / eps.
  const Index d = 4;
  const int n = 4;
  std::vector<Matrix> hs(n, Matrix::Identity(d, d));
  std::vector<Vector> bs(n, Vector::Zero(d));
  const auto p = QuadraticProblem::create(hs, bs);
  Vector start = Vector::Zero(d);
  start[0] = 1.0;  // f(w0) = ||w0||^2 / 2 = 1 exactly, f_inf = 0
  start[1] = 1.0;
  for (double eps : {0.1, 0.01}) {
    const CommComparison cmp = comm_comparison(p, eps, start);
    const auto k_fedp3 = static_cast<std::uint64_t>(
        std::ceil(36.0 / (eps * eps)));
    const auto k_dgd = static_cast<std::uint64_t>(std::ceil(2.0 / eps));
    CHECK(cmp.k_fedp3 == k_fedp3);
    CHECK(cmp.k_dgd == k_dgd);
    CHECK(cmp.per_round_fedp3 == static_cast<std::uint64_t>(d));
    CHECK(cmp.per_round_dgd == static_cast<std::uint64_t>(n * d));
    CHECK(cmp.cost_fedp3 == k_fedp3 * d);
    CHECK(cmp.cost_dgd == k_dgd * n * d);
    CHECK(cmp.ratio ==
          doctest::Approx(static_cast<double>(n * k_dgd) / k_fedp3));
    // Same-assumption route: identical iteration counts, ratio exactly n.
    CHECK(cmp.k_dgd_smooth == cmp.k_fedp3);
    CHECK(cmp.ratio_smooth == doctest::Approx(static_cast<double>(n)));
  }

  // n = 1: per-round costs coincide.
  const auto single = QuadraticProblem::create(
      {Matrix::Identity(d, d)}, {Vector::Zero(d)});
  const CommComparison cmp1 = comm_comparison(single, 0.1, start);
  CHECK(cmp1.per_round_fedp3 == cmp1.per_round_dgd);
  CHECK_THROWS_AS(comm_comparison(single, 0.0, start), std::invalid_argument);
}

TEST_CASE("pruning certificate: keep-ratio 1 reduces to powers of L") {
  Matrix l(2, 2);
  l << 3, 0, 0, 1;
  const auto p = QuadraticProblem::create({l}, {Vector::Zero(2)});
  const PruningAnalysis a =
      pruning_certificate(p, 1.0, ExpectationMode::kExhaustive, 0, 1);
  CHECK((a.w_matrix - l * l).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.expected_blb - l * l * l).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(a.w_psd);
  CHECK(a.theta_finite);
  CHECK(a.theta == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(a.h_estimate == 0.0);
}

TEST_CASE("pruning certificate: d = 2 brute force matches the closed form") {
  // Single client, diagonal L = diag(la, lb), iid keeps with prob p:
  // W = diag(p la^2, p lb^2), E[B L B] = diag(p la^3, p lb^3),
  // theta = max(la, lb).
  const double la = 2.0, lb = 0.5, prob = 0.7;
  Matrix l(2, 2);
  l << la, 0, 0, lb;
  const auto p = QuadraticProblem::create({l}, {Vector::Zero(2)});
  const PruningAnalysis a =
      pruning_certificate(p, prob, ExpectationMode::kExhaustive, 0, 1);
  Matrix w_expect(2, 2), blb_expect(2, 2);
  w_expect << prob * la * la, 0, 0, prob * lb * lb;
  blb_expect << prob * la * la * la, 0, 0, prob * lb * lb * lb;
  CHECK((a.w_matrix - w_expect).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.expected_blb - blb_expect).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(a.theta == doctest::Approx(la).epsilon(1e-9));
  CHECK(a.pencil_gap >= -1e-8);
}

TEST_CASE("certificate expectations match literal dense-matrix enumeration") {
  // Independent oracle: walk the same outcome space with explicit diagonal
  // mask matrices and full products, no bit tricks.
  RngStream rng = derive_stream(21);
  const auto p = random_quadratic(2, 3, 0.4, 0.0, rng);
  const double keep = 0.6;
  const Matrix l_bar = p.mean_hessian();
  Matrix w_expect = Matrix::Zero(3, 3);
  Matrix blb_expect = Matrix::Zero(3, 3);
  for (int bits = 0; bits < 64; ++bits) {  // 2^(2 clients * 3 coords)
    double prob = 1.0;
    std::vector<Matrix> masks;
    for (int i = 0; i < 2; ++i) {
      Matrix m = Matrix::Zero(3, 3);
      for (int r = 0; r < 3; ++r) {
        const bool kept = (bits >> (3 * i + r)) & 1;
        prob *= kept ? keep : 1.0 - keep;
        if (kept) m(r, r) = 1.0;
      }
      masks.push_back(m);
    }
    const Matrix mean_p = 0.5 * (masks[0] + masks[1]);
    const Matrix b = 0.5 * (masks[0] * p.hessians[0] * masks[0] +
                            masks[1] * p.hessians[1] * masks[1]);
    w_expect += prob * (mean_p * l_bar * b);
    blb_expect += prob * (b * l_bar * b);
  }
  w_expect = 0.5 * (w_expect + w_expect.transpose()).eval();

  const PruningAnalysis a =
      pruning_certificate(p, keep, ExpectationMode::kExhaustive, 0, 1);
  CHECK((a.w_matrix - w_expect).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.expected_blb - blb_expect).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("Monte Carlo expectation agrees with exhaustive enumeration") {
  RngStream rng = derive_stream(12);
  const auto p = random_quadratic(2, 4, 0.4, 0.0, rng);
  const PruningAnalysis ex =
      pruning_certificate(p, 0.75, ExpectationMode::kExhaustive, 0, 1);
  const PruningAnalysis mc =
      pruning_certificate(p, 0.75, ExpectationMode::kMonteCarlo, 200000, 7);
  CHECK((ex.w_matrix - mc.w_matrix).cwiseAbs().maxCoeff() <= 0.02);
  CHECK((ex.expected_blb - mc.expected_blb).cwiseAbs().maxCoeff() <= 0.05);
  CHECK(ex.theta == doctest::Approx(mc.theta).epsilon(0.05));
}

TEST_CASE("exhaustive mode rejects oversized outcome spaces") {
  RngStream rng = derive_stream(13);
  const auto p = random_quadratic(4, 8, 0.4, 0.0, rng);
  CHECK_THROWS_AS(
      pruning_certificate(p, 0.5, ExpectationMode::kExhaustive, 0, 1),
      std::invalid_argument);
}

TEST_CASE("pruning certificate requires the interpolation regime") {
  RngStream rng = derive_stream(14);
  const auto p = random_quadratic(2, 4, 0.4, 1.0, rng);
  CHECK_THROWS_AS(
      pruning_certificate(p, 0.5, ExpectationMode::kExhaustive, 0, 1),
      std::invalid_argument);
}

TEST_CASE("pruned run with keep-ratio 1 is plain GD and meets its bound") {
  RngStream rng = derive_stream(15);
  const auto p = random_quadratic(2, 4, 0.5, 0.0, rng);
  const PruningAnalysis a =
      pruning_certificate(p, 1.0, ExpectationMode::kExhaustive, 0, 1);
  REQUIRE(a.h_estimate == 0.0);
  Vector start(4);
  for (Index j = 0; j < 4; ++j) start[j] = normal_draw(rng);
  const BoundCertificate cert =
      run_pruned_ist_and_certify(p, a, start, 50, 20, 3);
  CHECK(cert.satisfied);
  CHECK(cert.seed_fraction_within == 1.0);
  CHECK(cert.constants.at("gamma") == doctest::Approx(1.0 / a.theta));

  // The dynamics at keep-ratio 1 are exact GD; the weighted statistic then
  // telescopes against the GD trajectory. Spot-check against a manual run.
  Vector w = start;
  const double gamma = cert.constants.at("gamma");
  double manual = 0.0;
  const auto weights = recursion_weights(1.0, 50);
  for (int k = 0; k < 50; ++k) {
    manual += weights[static_cast<std::size_t>(k)] * w.dot(a.w_matrix * w);
    w -= gamma * (p.mean_hessian() * w);
  }
  CHECK(cert.lhs == doctest::Approx(manual).epsilon(1e-10));
}

TEST_CASE("pruned certification at p = 0.75 keeps nearly all seeds in bound") {
  RngStream rng = derive_stream(16);
  const auto p = random_quadratic(2, 4, 0.5, 0.0, rng);
  const PruningAnalysis a =
      pruning_certificate(p, 0.75, ExpectationMode::kExhaustive, 0, 5);
  REQUIRE(a.certificate_ok());
  Vector start(4);
  for (Index j = 0; j < 4; ++j) start[j] = normal_draw(rng);
  const BoundCertificate cert =
      run_pruned_ist_and_certify(p, a, start, 60, 200, 9);
  CHECK(cert.satisfied);
  CHECK(cert.seed_fraction_within >= 0.99);
}

TEST_CASE("step-size overrides beyond the certified gate are rejected") {
  RngStream rng = derive_stream(17);
  const auto p = random_quadratic(2, 4, 0.5, 0.0, rng);
  const PruningAnalysis a =
      pruning_certificate(p, 1.0, ExpectationMode::kExhaustive, 0, 1);
  Vector start = Vector::Ones(4);
  CHECK_THROWS_AS(run_pruned_ist_and_certify(p, a, start, 20, 5, 1,
                                             2.0 / a.theta),
                  std::invalid_argument);
}

TEST_CASE("divergent step sizes are reported with the iteration index") {
  RngStream rng = derive_stream(20);
  const auto p = random_quadratic(1, 4, 1.0, 0.0, rng);
  ISTConfig cfg;
  cfg.problem = &p;
  cfg.iterations = 400;
  cfg.step_size = 50.0;  // far beyond 2/L
  cfg.aggregation_sketch = false;
  cfg.start = Vector::Ones(4);
  try {
    run_ist(cfg);
    FAIL("expected divergence");
  } catch (const DivergedError& e) {
    CHECK(e.round >= 0);
  }
}

TEST_CASE("weighted-recursion lemma on synthetic sequences") {
  RngStream rng = derive_stream(18);
  for (int trial = 0; trial < 1000; ++trial) {
    const double a = 1.0 + 0.5 * uniform_real(rng);
    const double c = uniform_real(rng);
    const int k = 1 + static_cast<int>(uniform_index(rng, 30));
    double x = 5.0 * uniform_real(rng);
    const double x0 = x;
    std::vector<double> ys;
    for (int i = 0; i < k; ++i) {
      const double y = uniform_real(rng) * (a * x + c);
      ys.push_back(y);
      x = a * x - y + c;
    }
    double s_k = 0.0;
    for (int i = 0; i < k; ++i) s_k += std::pow(a, k - i - 1);
    const auto weights = recursion_weights(a, k);
    double expect_y = 0.0;
    for (int i = 0; i < k; ++i) {
      expect_y += weights[static_cast<std::size_t>(i)] *
                  ys[static_cast<std::size_t>(i)];
    }
    const double bound_tight = (std::pow(a, k) * x0 - x) / s_k + c;
    const double bound_loose = std::pow(a, k) * x0 / s_k + c;
    CHECK(expect_y <= bound_tight + 1e-9);
    CHECK(bound_tight <= bound_loose + 1e-9);
  }
}

TEST_CASE("exp-control inequality a^K / S_K <= e^((a-1)K) / K") {
  RngStream rng = derive_stream(19);
  for (int trial = 0; trial < 1000; ++trial) {
    const double a = 1.0 + uniform_real(rng);
    const int k = 1 + static_cast<int>(uniform_index(rng, 60));
    double s_k = 0.0;
    for (int i = 0; i < k; ++i) s_k += std::pow(a, k - i - 1);
    CHECK(std::pow(a, k) / s_k <=
          std::exp((a - 1.0) * k) / static_cast<double>(k) + 1e-9);
  }
}
