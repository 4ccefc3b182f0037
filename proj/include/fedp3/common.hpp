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

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace fedp3 {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Thrown when vector/matrix dimensions do not match an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an objective has no finite infimum (singular mean Hessian with
/// a linear term outside its range).
class UnboundedBelowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when an optimization run produces a non-finite loss. Carries the
/// round/step at which the blow-up was detected (-1 when unknown).
class DivergedError : public std::runtime_error {
 public:
  DivergedError(const std::string& msg, long round, long step)
      : std::runtime_error(msg), round(round), step(step) {}
  long round = -1;
  long step = -1;
};

/// Thrown on malformed experiment configs; message carries key/line context.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void require_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace fedp3
