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

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedp3/common.hpp"
#include "fedp3/config.hpp"
#include "fedp3/runner.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  bool fail_on_violation = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Experiment config file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.seed, "Master seed (overrides the config)");
  cmd->add_option("--out", flags.out_dir, "Output directory");
  cmd->add_option("--threads", flags.threads, "Worker threads");
  cmd->add_flag("--fail-on-violation", flags.fail_on_violation,
                "Exit nonzero when a certificate fails");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated network-pruning simulator and analysis toolkit"};
  app.require_subcommand(1);

  CommonFlags flags;
  struct LdpFlags {
    std::optional<double> epsilon, delta, clip, c;
    std::optional<int> m, b, seeds;
  } ldp_flags;

  CLI::App* fedp3_cmd =
      app.add_subcommand("fedp3", "Run the federated pruning loop");
  CLI::App* ist_cmd =
      app.add_subcommand("ist", "Sketch-based analyzable variant");
  CLI::App* dgd_cmd =
      app.add_subcommand("dgd", "Distributed gradient descent baseline");
  CLI::App* ldp_cmd =
      app.add_subcommand("ldp", "Locally differentially private variant");
  CLI::App* verify_cmd =
      app.add_subcommand("verify", "Run the certificate battery");
  CLI::App* account_cmd =
      app.add_subcommand("account", "Parameter/communication accounting");
  for (CLI::App* cmd :
       {fedp3_cmd, ist_cmd, dgd_cmd, ldp_cmd, verify_cmd, account_cmd}) {
    add_common(cmd, flags);
  }
  ldp_cmd->add_option("--epsilon", ldp_flags.epsilon, "Privacy epsilon");
  ldp_cmd->add_option("--delta", ldp_flags.delta, "Privacy delta");
  ldp_cmd->add_option("--m", ldp_flags.m, "Samples per client");
  ldp_cmd->add_option("--b", ldp_flags.b, "Minibatch size");
  ldp_cmd->add_option("--clip", ldp_flags.clip,
                      "Gradient clip bound C (0 = calibrate)");
  ldp_cmd->add_option("--c", ldp_flags.c, "Calibration constant c");
  ldp_cmd->add_option("--seeds", ldp_flags.seeds, "Monte Carlo seeds");

  CLI11_PARSE(app, argc, argv);

  try {
    fedp3::ExperimentConfig config = fedp3::parse_config(flags.config_path);
    config.subcommand = app.get_subcommands().front()->get_name();
    if (flags.seed) config.seed = *flags.seed;
    if (flags.out_dir) config.out_dir = *flags.out_dir;
    if (flags.threads) config.threads = *flags.threads;
    if (flags.fail_on_violation) config.fail_on_violation = true;
    if (config.subcommand == "ldp") {
      if (ldp_flags.epsilon) config.epsilon = *ldp_flags.epsilon;
      if (ldp_flags.delta) config.delta = *ldp_flags.delta;
      if (ldp_flags.m) config.privacy_m = *ldp_flags.m;
      if (ldp_flags.b) config.privacy_b = *ldp_flags.b;
      if (ldp_flags.clip) config.clip = *ldp_flags.clip;
      if (ldp_flags.c) config.calibration_c = *ldp_flags.c;
      if (ldp_flags.seeds) config.seeds = *ldp_flags.seeds;
    }
    config.validate();
    return fedp3::run_experiment(config);
  } catch (const fedp3::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return fedp3::kExitConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return fedp3::kExitConfigError;
  } catch (const fedp3::DivergedError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return fedp3::kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
