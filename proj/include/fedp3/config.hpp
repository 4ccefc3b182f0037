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
#include <string>

namespace fedp3 {

// Experiment configuration: an INI-style file with sections [model], [data],
// [plans], [train], [privacy]. Unknown sections or keys are rejected with
// the offending name and line. Every key has a documented default, so an
// empty file is a valid config.

struct ExperimentConfig {
  std::string subcommand;  // fedp3 | ist | dgd | ldp | verify | account

  // [model]
  std::string model_kind = "mlp";  // mlp | quadratic
  int input_dim = 16;
  int hidden_width = 32;
  int hidden_layers = 3;
  int classes = 10;
  int quad_dim = 8;
  int quad_clients = 2;
  double quad_ridge = 0.1;
  double quad_linear_scale = 0.0;

  // [data]
  int samples = 2000;
  int features = 16;
  int data_classes = 10;
  double separation = 3.0;
  int clients = 10;
  std::string split = "classwise";  // classwise | dirichlet
  int classes_per_client = 5;
  double dirichlet_alpha = 0.5;
  double train_fraction = 0.7;

  // [plans]
  std::string scheme = "full";
  double keep_ratio = 0.9;
  std::string local_strategy = "fixed";
  double q_lo = 0.7;
  std::string aggregation = "simple";
  double attention_tau = 4.0;
  bool global_pruning = false;  // IST variant: prune weights+gradients
  std::string arch = "cifar_cnn";  // accounting preset

  // [train]
  int rounds = 200;
  int local_steps = 10;
  int batch = 48;
  double learning_rate = 0.05;
  double participation = 1.0;
  int seeds = 1;
  int iterations = 100;    // K for ist/dgd/certification runs
  double step_size = 0.0;  // 0 = choose the certified step size
  int metrics_every = 1;
  double comparison_eps = 0.1;
  std::uint64_t seed = 42;
  std::string out_dir = "out";
  int threads = 1;
  bool fail_on_violation = false;
  std::string fixtures_dir = "fixtures";

  // [privacy]
  double epsilon = 1.0;
  double delta = 0.01;
  int privacy_m = 100;
  int privacy_b = 48;
  double clip = 0.0;  // 0 = calibrate (99th-percentile gradient norm)
  double calibration_c = 1.0;
  double gate_c_prime = 1.0;
  double smoothness = 0.0;  // 0 = use the instance's L_max
  double sample_spread = 1.0;

  void validate() const;
};

/// Parses and validates a config file. Empty path yields all defaults.
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

/// Canonical serialization; serialize(parse(x)) is a fixpoint.
std::string serialize_config(const ExperimentConfig& config);

/// FNV-1a hash of the canonical serialization, hex-encoded.
std::string config_hash(const ExperimentConfig& config);

}  // namespace fedp3
