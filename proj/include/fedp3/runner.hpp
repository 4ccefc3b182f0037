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

#include <string>

#include "fedp3/config.hpp"

namespace fedp3 {

// Exit codes shared by the runner and the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitCertificateViolation = 4;

/// Executes the config's subcommand and writes its artifacts (CSV metrics,
/// report JSON, run manifest) atomically under config.out_dir. Identical
/// (seed, config) pairs produce byte-identical artifacts.
int run_experiment(const ExperimentConfig& config);

/// Writes content to path via a temp file + rename.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace fedp3
