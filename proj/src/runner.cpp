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

#include "fedp3/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "fedp3/accounting.hpp"
#include "fedp3/common.hpp"
#include "fedp3/data.hpp"
#include "fedp3/fedcore.hpp"
#include "fedp3/ldp.hpp"
#include "fedp3/objective.hpp"
#include "fedp3/rng.hpp"
#include "fedp3/sketch.hpp"
#include "fedp3/theory.hpp"

namespace fedp3 {

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kVersion = "0.1.0";

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

json certificate_json(const BoundCertificate& cert) {
  json j;
  j["name"] = cert.name;
  j["lhs"] = cert.lhs;
  j["rhs"] = cert.rhs;
  j["ci_width"] = cert.stat_margin;
  j["pass"] = cert.satisfied;
  j["seed_fraction_within"] = cert.seed_fraction_within;
  j["constants"] = json::object();
  for (const auto& [k, v] : cert.constants) j["constants"][k] = v;
  return j;
}

void print_certificate(const BoundCertificate& cert) {
  std::printf("[%s] %s: lhs=%.6g rhs=%.6g ci=%.3g\n",
              cert.satisfied ? "PASS" : "FAIL", cert.name.c_str(), cert.lhs,
              cert.rhs, cert.stat_margin);
}

struct ArtifactWriter {
  std::string dir;
  std::vector<std::string> names;

  void write(const std::string& name, const std::string& content) {
    std::filesystem::create_directories(dir);
    write_file_atomic(dir + "/" + name, content);
    names.push_back(name);
  }
};

void write_manifest(ArtifactWriter& artifacts, const ExperimentConfig& config) {
  json manifest;
  manifest["subcommand"] = config.subcommand;
  manifest["config_hash"] = config_hash(config);
  manifest["seed"] = config.seed;
  manifest["version"] = kVersion;
  manifest["artifacts"] = artifacts.names;
  artifacts.write("manifest.json", manifest.dump(2) + "\n");
}

LayeredModel model_from_config(const ExperimentConfig& config) {
  std::vector<Index> dims;
  dims.push_back(config.input_dim);
  for (int l = 0; l < config.hidden_layers; ++l)
    dims.push_back(config.hidden_width);
  dims.push_back(config.classes);
  RngStream rng = derive_stream(config.seed, stream_tag::kInit);
  return make_mlp(dims, rng);
}

QuadraticProblem quadratic_from_config(const ExperimentConfig& config) {
  RngStream rng = derive_stream(config.seed, stream_tag::kInit);
  return random_quadratic(config.quad_clients, config.quad_dim,
                          config.quad_ridge, config.quad_linear_scale, rng);
}

Vector start_from_config(const ExperimentConfig& config, Index dim) {
  RngStream rng = derive_stream(config.seed, stream_tag::kData);
  Vector w(dim);
  for (Index r = 0; r < dim; ++r) w[r] = normal_draw(rng);
  return w;
}

std::string trajectory_csv(const ISTTrajectory& traj) {
  std::ostringstream out;
  out << "k,f_value,grad_sq,up_scalars_cum,down_scalars_cum\n";
  std::uint64_t up = 0, down = 0;
  for (std::size_t k = 0; k < traj.f_values.size(); ++k) {
    out << k << "," << fmt(traj.f_values[k]) << "," << fmt(traj.grad_sq[k])
        << "," << up << "," << down << "\n";
    up += traj.up_scalars_per_round;
    down += traj.down_scalars_per_round;
  }
  return out.str();
}

int run_fedp3_command(const ExperimentConfig& config,
                      ArtifactWriter& artifacts) {
  require(config.features == config.input_dim,
          "[data] features must equal [model] input_dim");
  require(config.data_classes == config.classes,
          "[data] classes must equal [model] classes");
  LayeredModel model = model_from_config(config);
  RngStream data_rng = derive_stream(config.seed, stream_tag::kData);
  const Dataset data =
      gen_synthetic(config.samples, config.features, config.data_classes,
                    config.separation, data_rng);
  const Partition parts =
      config.split == "classwise"
          ? split_classwise(data, config.clients, config.classes_per_client,
                            data_rng)
          : split_dirichlet(data, config.clients, config.dirichlet_alpha,
                            data_rng);
  auto [train_parts, test_parts] =
      split_train_test(parts, config.train_fraction, data_rng);

  RngStream plan_rng = derive_stream(config.seed, stream_tag::kPlans);
  FedRunConfig run;
  run.init_model = model;
  run.data = &data;
  run.train_parts = train_parts;
  run.test_parts = test_parts;
  run.plans = make_plans(model, config.clients,
                         PlanScheme::parse(config.scheme), config.keep_ratio,
                         parse_local_strategy(config.local_strategy),
                         config.local_steps, config.learning_rate, config.q_lo,
                         plan_rng);
  run.rounds = config.rounds;
  run.participation = config.participation;
  run.aggregation = parse_aggregation_mode(config.aggregation);
  run.attention_tau = config.attention_tau;
  run.batch_size = config.batch;
  run.seed = config.seed;
  run.threads = config.threads;
  run.metrics_every = config.metrics_every;
  run.tag = config.scheme + "/" + config.local_strategy + "/" +
            config.aggregation;

  const std::vector<RoundMetrics> metrics = run_fedp3(run);

  std::ostringstream csv;
  csv << "round,loss,accuracy,up_scalars_cum,down_scalars_cum\n";
  for (const RoundMetrics& m : metrics) {
    csv << m.round << "," << fmt(m.train_loss) << "," << fmt(m.test_accuracy)
        << "," << m.up_scalars_cum << "," << m.down_scalars_cum << "\n";
  }
  artifacts.write("metrics.csv", csv.str());

  std::ostringstream pcsv;
  pcsv << "client_id,sample_index\n";
  for (std::size_t i = 0; i < parts.client_indices.size(); ++i) {
    for (Index j : parts.client_indices[i]) pcsv << i << "," << j << "\n";
  }
  artifacts.write("partition.csv", pcsv.str());
  return kExitOk;
}

int run_ist_command(const ExperimentConfig& config, ArtifactWriter& artifacts,
                    bool dgd) {
  const QuadraticProblem problem = quadratic_from_config(config);
  const Vector start = start_from_config(config, problem.dim());
  const SmoothnessConstants sc = smoothness_constants(problem);
  const double k = static_cast<double>(config.iterations);

  ISTTrajectory traj;
  double gamma = config.step_size;
  if (dgd) {
    if (gamma == 0.0) gamma = 1.0 / sc.mean;
    traj = run_dgd(problem, gamma, config.iterations, start);
  } else {
    if (gamma == 0.0) {
      gamma = std::min(1.0 / sc.max, 1.0 / std::sqrt(sc.mean * sc.max * k));
    }
    ISTConfig cfg;
    cfg.problem = &problem;
    cfg.iterations = config.iterations;
    cfg.step_size = gamma;
    cfg.aggregation_sketch = true;
    if (config.global_pruning) cfg.keep_ratio = config.keep_ratio;
    cfg.seed = config.seed;
    cfg.start = start;
    traj = run_ist(cfg);
  }
  artifacts.write("trajectory.csv", trajectory_csv(traj));

  json report;
  report["algorithm"] = dgd ? "dgd" : "ist";
  report["gamma"] = gamma;
  report["iterations"] = config.iterations;
  report["final_f"] = traj.f_values.back();
  report["final_grad_sq"] = traj.grad_sq.back();
  report["up_scalars_per_round"] = traj.up_scalars_per_round;
  report["down_scalars_per_round"] = traj.down_scalars_per_round;
  const CommComparison cmp =
      comm_comparison(problem, config.comparison_eps, start);
  report["comm_comparison"] = {{"eps", config.comparison_eps},
                               {"k_fedp3", cmp.k_fedp3},
                               {"k_dgd", cmp.k_dgd},
                               {"k_dgd_smooth", cmp.k_dgd_smooth},
                               {"per_round_fedp3", cmp.per_round_fedp3},
                               {"per_round_dgd", cmp.per_round_dgd},
                               {"cost_fedp3", cmp.cost_fedp3},
                               {"cost_dgd", cmp.cost_dgd},
                               {"cost_dgd_smooth", cmp.cost_dgd_smooth},
                               {"ratio_dgd_over_fedp3", cmp.ratio},
                               {"ratio_smooth", cmp.ratio_smooth}};
  artifacts.write("report.json", report.dump(2) + "\n");
  return kExitOk;
}

int run_ldp_command(const ExperimentConfig& config, ArtifactWriter& artifacts) {
  RngStream rng = derive_stream(config.seed, stream_tag::kInit);
  const StochasticQuadratic problem = random_stochastic_quadratic(
      config.quad_clients, config.quad_dim, config.privacy_m,
      config.sample_spread, config.quad_ridge, rng);
  // The reported stationarity bound absorbs sqrt(Delta0) into its constant, so
  // runs start at optimality gap 0.9 to stay in the certified regime.
  RngStream start_rng = derive_stream(config.seed, stream_tag::kData);
  const Vector start = gap_normalized_start(problem.base, 0.9, start_rng);

  PrivacyBudget budget;
  budget.epsilon = config.epsilon;
  budget.delta = config.delta;
  budget.samples_per_client = config.privacy_m;
  budget.minibatch = config.privacy_b;
  budget.calibration_c = config.calibration_c;
  budget.gate_c_prime = config.gate_c_prime;
  budget.smoothness = config.smoothness > 0.0
                          ? config.smoothness
                          : smoothness_constants(problem.base).max;
  budget.grad_bound = config.clip > 0.0
                          ? config.clip
                          : suggest_clip_bound(problem, budget, start, 20,
                                               config.seed);

  LdpRunOptions options;
  options.n_seeds = config.seeds;
  options.seed = config.seed;
  const LdpRunResult result = run_ldp_fedp3(problem, budget, start, options);

  std::ostringstream csv;
  csv << "k,f_value,grad_sq\n";
  for (std::size_t r = 0; r < result.traj_rounds.size(); ++r) {
    csv << result.traj_rounds[r] << "," << fmt(result.traj_f[r]) << ","
        << fmt(result.traj_grad_sq[r]) << "\n";
  }
  artifacts.write("ldp_trajectory.csv", csv.str());

  json report;
  report["certificate"] = certificate_json(result.certificate);
  report["sigma2"] = result.sigma2;
  report["delta0"] = result.delta0;
  report["iterations"] = result.rounds;
  report["gamma"] = result.schedule.step_size;
  report["gate_ok"] = result.schedule.gate_ok;
  report["comm_cost"] = result.comm_cost;
  const LdpCommCost cc = ldp_comm_cost(budget, result.delta0, config.quad_dim);
  report["comm_cost_formula"] = {{"cost", cc.cost},
                                 {"term_gradient", cc.term_gradient},
                                 {"term_privacy", cc.term_privacy}};
  artifacts.write("ldp_report.json", report.dump(2) + "\n");
  print_certificate(result.certificate);

  if (!result.certificate.satisfied && config.fail_on_violation) {
    return kExitCertificateViolation;
  }
  return kExitOk;
}

int run_account_command(const ExperimentConfig& config,
                        ArtifactWriter& artifacts) {
  const ArchSpec arch = ArchSpec::preset(config.arch);
  const std::string final_name = arch.final_layer().name;

  std::ostringstream csv;
  csv << "layer,params,deployed_at_p,upload\n";
  for (const LayerDesc& l : arch.layers) {
    if (l.param_count == 0) continue;
    const std::vector<std::string> trained =
        l.name == final_name ? std::vector<std::string>{final_name}
                             : std::vector<std::string>{l.name, final_name};
    csv << l.name << "," << l.param_count << ","
        << fmt(deployed_size(arch, trained, config.keep_ratio)) << ","
        << upload_cost(arch, trained) << "\n";
  }
  artifacts.write("account.csv", csv.str());

  const SingleLayerReport report =
      single_layer_report(arch, config.keep_ratio);
  json j;
  j["arch"] = arch.name;
  j["keep_ratio"] = config.keep_ratio;
  j["total_params"] = arch.total_params();
  j["deployed_spread"] = report.deployed_spread;
  j["upload_spread"] = report.upload_spread;
  j["scheme_upload_fractions"] = json::object();
  const int hidden = static_cast<int>(arch.trainable_layers().size()) - 1;
  for (const auto& [label, count] :
       std::vector<std::pair<std::string, int>>{{"lowerb", 1},
                                                {"opu2", 2},
                                                {"opu3", 3},
                                                {"full", hidden}}) {
    if (count > hidden) continue;
    const Fraction f = scheme_upload_fraction(arch, count);
    j["scheme_upload_fractions"][label] = {
        {"num", f.num}, {"den", f.den}, {"value", f.value()}};
  }
  artifacts.write("account_report.json", j.dump(2) + "\n");

  std::printf("%s: %llu params; deployed spread %.4f, upload spread %.4f at "
              "keep ratio %.2f\n",
              arch.name.c_str(),
              static_cast<unsigned long long>(arch.total_params()),
              report.deployed_spread, report.upload_spread, config.keep_ratio);
  return kExitOk;
}

std::vector<std::pair<std::string, QuadraticProblem>> load_fixtures(
    const ExperimentConfig& config) {
  std::vector<std::pair<std::string, QuadraticProblem>> fixtures;
  std::error_code ec;
  std::vector<std::string> paths;
  for (const auto& entry :
       std::filesystem::directory_iterator(config.fixtures_dir, ec)) {
    const std::string p = entry.path().string();
    if (p.size() > 7 && p.substr(p.size() - 7) == ".qp.txt") paths.push_back(p);
  }
  std::sort(paths.begin(), paths.end());
  for (const std::string& p : paths) {
    fixtures.emplace_back(std::filesystem::path(p).filename().string(),
                          load_quadratic(p));
  }
  if (fixtures.empty()) {
    // No bundled fixtures reachable: fall back to deterministic instances.
    RngStream rng = derive_stream(config.seed, stream_tag::kInit);
    fixtures.emplace_back("generated_n2_d4",
                          random_quadratic(2, 4, 0.5, 0.0, rng));
    fixtures.emplace_back("generated_n2_d8",
                          random_quadratic(2, 8, 0.5, 0.3, rng));
  }
  return fixtures;
}

int run_verify_command(const ExperimentConfig& config,
                       ArtifactWriter& artifacts) {
  const int seeds = std::max(20, config.seeds);
  std::vector<BoundCertificate> certs;

  {
    // Exhaustive unbiasedness of the aggregation sketches at d = 4.
    BoundCertificate cert;
    cert.name = "sketch_exhaustive_unbiasedness";
    const Index d = 4;
    Vector x(d);
    x << 0.3, -1.2, 2.0, 0.7;
    double worst = 0.0;
    for (int n : {1, 2, 4}) {
      std::vector<Index> perm(d);
      for (Index i = 0; i < d; ++i) perm[static_cast<std::size_t>(i)] = i;
      std::vector<Vector> sums(static_cast<std::size_t>(n),
                               Vector::Zero(d));
      long count = 0;
      do {
        const auto sketches = perm_sketches_from(perm, n);
        for (int i = 0; i < n; ++i) {
          sums[static_cast<std::size_t>(i)] +=
              apply_perm_sketch(sketches[static_cast<std::size_t>(i)], x);
        }
        ++count;
      } while (std::next_permutation(perm.begin(), perm.end()));
      for (int i = 0; i < n; ++i) {
        worst = std::max(worst,
                         (sums[static_cast<std::size_t>(i)] /
                              static_cast<double>(count) -
                          x).cwiseAbs().maxCoeff());
      }
    }
    cert.lhs = worst;
    cert.rhs = 1e-12;
    cert.satisfied = cert.lhs <= cert.rhs + 1e-15;
    cert.constants = {{"dim", 4.0}};
    certs.push_back(cert);
  }

  {
    // Monte Carlo second-moment inequality.
    BoundCertificate cert;
    cert.name = "sketch_second_moment";
    const Index d = 8;
    const int n = 4;
    RngStream rng = derive_stream(config.seed, stream_tag::kPermutation);
    std::vector<Vector> ys;
    double rhs = 0.0;
    for (int i = 0; i < n; ++i) {
      Vector y(d);
      for (Index r = 0; r < d; ++r) y[r] = normal_draw(rng);
      y.normalize();
      rhs += y.squaredNorm();
      ys.push_back(y);
    }
    rhs /= n;
    const int draws = 10000;
    double mean = 0.0, m2 = 0.0;
    for (int s = 0; s < draws; ++s) {
      const auto sketches = sample_perm_sketches(d, n, rng);
      Vector acc = Vector::Zero(d);
      for (int i = 0; i < n; ++i) {
        acc += apply_perm_sketch(sketches[static_cast<std::size_t>(i)],
                                 ys[static_cast<std::size_t>(i)]);
      }
      acc /= n;
      const double v = acc.squaredNorm();
      const double delta = v - mean;
      mean += delta / (s + 1);
      m2 += delta * (v - mean);
    }
    cert.lhs = mean;
    cert.rhs = rhs;
    cert.stat_margin = 3.0 * std::sqrt(m2 / (draws - 1) / draws);
    cert.satisfied = cert.lhs <= cert.rhs + cert.stat_margin + 1e-9;
    cert.constants = {{"dim", static_cast<double>(d)},
                      {"n", static_cast<double>(n)},
                      {"draws", static_cast<double>(draws)}};
    certs.push_back(cert);
  }

  for (const auto& [name, problem] : load_fixtures(config)) {
    const Vector start = start_from_config(config, problem.dim());
    if (problem.dim() % problem.n_clients() == 0) {
      BoundCertificate cert = certify_aggregation_bound(
          problem, start, std::min(config.iterations, 60), seeds, config.seed);
      cert.name = "model_aggregation/" + name;
      certs.push_back(std::move(cert));
    }
    bool interpolation = true;
    for (const Vector& b : problem.linear_terms) {
      interpolation &= b.isZero(0.0);
    }
    if (interpolation) {
      const long atoms = static_cast<long>(problem.n_clients()) *
                         static_cast<long>(problem.dim());
      const PruningAnalysis analysis = pruning_certificate(
          problem, 0.75,
          atoms <= 16 ? ExpectationMode::kExhaustive
                      : ExpectationMode::kMonteCarlo,
          20000, config.seed);
      BoundCertificate wcert;
      wcert.name = "pruning_W_psd/" + name;
      wcert.lhs = analysis.w_psd && analysis.theta_finite ? 0.0 : 1.0;
      wcert.rhs = 0.0;
      wcert.satisfied = analysis.certificate_ok();
      wcert.constants = {{"theta", analysis.theta},
                         {"h", analysis.h_estimate},
                         {"pencil_gap", analysis.pencil_gap}};
      certs.push_back(std::move(wcert));
      if (analysis.certificate_ok()) {
        BoundCertificate cert = run_pruned_ist_and_certify(
            problem, analysis, start, std::min(config.iterations, 60),
            std::max(seeds, 100), config.seed);
        cert.name = "global_pruning/" + name;
        certs.push_back(std::move(cert));
      }
    }
  }

  {
    // Calibration goldens: sigma^2 closed form on pinned budgets.
    BoundCertificate cert;
    cert.name = "ldp_sigma_goldens";
    struct Golden {
      double eps, delta, c, clip;
      int m, k;
      double expected;
    };
    const std::vector<Golden> goldens = {
        {1.0, 0.01, 1.0, 1.0, 100, 100, 4.605170185988092e-02},
        {2.0, 0.01, 1.0, 1.0, 100, 100, 1.151292546497023e-02},
        {1.0, 0.001, 1.0, 1.0, 1000, 50, 3.4538776394910683e-04},
        {0.5, 0.05, 2.0, 3.0, 200, 10, 5.392318092397184e-02},
        {1.0, 0.01, 1.0, 1.0, 200, 1, 1.151292546497023e-04},
    };
    double worst = 0.0;
    for (const Golden& g : goldens) {
      PrivacyBudget budget;
      budget.epsilon = g.eps;
      budget.delta = g.delta;
      budget.calibration_c = g.c;
      budget.grad_bound = g.clip;
      budget.samples_per_client = g.m;
      budget.minibatch = 1;
      const double got = calibrate_sigma(budget, g.k, 8).variance;
      worst = std::max(worst, std::abs(got - g.expected) / g.expected);
    }
    cert.lhs = worst;
    cert.rhs = 1e-12;
    cert.satisfied = cert.lhs <= cert.rhs;
    certs.push_back(cert);
  }

  {
    // A small end-to-end private run against the stationarity bound. The bound's
    // constant absorbs sqrt(Delta0), so start at gap 0.9.
    RngStream rng = derive_stream(config.seed, stream_tag::kInit);
    const StochasticQuadratic problem = random_stochastic_quadratic(
        config.quad_clients, config.quad_dim, 200, 1.0, config.quad_ridge,
        rng);
    RngStream start_rng = derive_stream(config.seed, stream_tag::kData);
    const Vector start = gap_normalized_start(problem.base, 0.9, start_rng);
    PrivacyBudget budget;
    budget.epsilon = 1.0;
    budget.delta = 0.01;
    budget.samples_per_client = 200;
    budget.minibatch = 48;
    budget.smoothness = smoothness_constants(problem.base).max;
    budget.grad_bound =
        suggest_clip_bound(problem, budget, start, 20, config.seed);
    LdpRunOptions options;
    options.n_seeds = std::min(seeds, 20);
    options.seed = config.seed;
    LdpRunResult result = run_ldp_fedp3(problem, budget, start, options);
    result.certificate.name = "ldp_fedp3_bound";
    certs.push_back(result.certificate);
  }

  json report = json::array();
  bool all_ok = true;
  for (const BoundCertificate& cert : certs) {
    print_certificate(cert);
    report.push_back(certificate_json(cert));
    all_ok &= cert.satisfied;
  }
  artifacts.write("verify_report.json", report.dump(2) + "\n");
  return all_ok ? kExitOk : kExitCertificateViolation;
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot open " + tmp + " for writing");
    out << content;
    require(out.good(), "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

int run_experiment(const ExperimentConfig& config) {
  config.validate();
  ArtifactWriter artifacts{config.out_dir, {}};
  int code = kExitOk;
  try {
    if (config.subcommand == "fedp3") {
      code = run_fedp3_command(config, artifacts);
    } else if (config.subcommand == "ist") {
      code = run_ist_command(config, artifacts, /*dgd=*/false);
    } else if (config.subcommand == "dgd") {
      code = run_ist_command(config, artifacts, /*dgd=*/true);
    } else if (config.subcommand == "ldp") {
      code = run_ldp_command(config, artifacts);
    } else if (config.subcommand == "verify") {
      code = run_verify_command(config, artifacts);
    } else if (config.subcommand == "account") {
      code = run_account_command(config, artifacts);
    } else {
      throw ConfigError("unknown subcommand '" + config.subcommand + "'");
    }
  } catch (const DivergedError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    write_manifest(artifacts, config);
    return kExitDiverged;
  }
  write_manifest(artifacts, config);
  return code;
}

}  // namespace fedp3
