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
#include <vector>

#include "fedp3/common.hpp"
#include "fedp3/rng.hpp"

namespace fedp3 {

// ---------------------------------------------------------------------------
// Distributed quadratics: f_i(w) = 1/2 w' L_i w - w' b_i, f = mean over
// clients. Exact gradients, spectra and infima make these the testbed for
// every convergence certificate in the project.
// ---------------------------------------------------------------------------

struct QuadraticProblem {
  std::vector<Matrix> hessians;      // symmetric PSD, one per client
  std::vector<Vector> linear_terms;  // one per client

  int n_clients() const { return static_cast<int>(hessians.size()); }
  Index dim() const { return hessians.empty() ? 0 : hessians[0].rows(); }
  Matrix mean_hessian() const;
  Vector mean_linear() const;

  /// Validates symmetry (1e-10) and PSD-ness (eigenvalues >= -1e-10).
  static QuadraticProblem create(std::vector<Matrix> hessians,
                                 std::vector<Vector> linear_terms);
};

/// L_i = A_i' A_i / d with standard normal A_i, plus ridge * I; linear terms
/// scaled standard normal (zero when linear_scale == 0).
QuadraticProblem random_quadratic(int n_clients, Index dim, double ridge,
                                  double linear_scale, RngStream& rng);

struct SmoothnessConstants {
  std::vector<double> per_client;  // spectral norm of each client Hessian
  double mean = 0.0;               // L-bar
  double max = 0.0;                // L_max
};

Vector quad_local_grad(const QuadraticProblem& p, int client, const Vector& w);
double quad_value(const QuadraticProblem& p, int client, const Vector& w);
double quad_global_value(const QuadraticProblem& p, const Vector& w);
Vector quad_global_grad(const QuadraticProblem& p, const Vector& w);

/// Infimum of the mean objective. Zero when every linear term vanishes;
/// otherwise f at w* = mean_hessian^-1 mean_linear (least-squares when the
/// mean Hessian is singular but consistent). Throws UnboundedBelowError when
/// the mean linear term leaves the singular Hessian's range.
double quad_f_inf(const QuadraticProblem& p);

/// Per-client infimum, same conventions as quad_f_inf.
double quad_client_f_inf(const QuadraticProblem& p, int client);

/// min_i of the per-client infima: the common scalar lower bound that the
/// gradient-norm lemma and the ABC instantiation require.
double quad_common_f_inf(const QuadraticProblem& p);

SmoothnessConstants smoothness_constants(const QuadraticProblem& p);

/// A start w* + alpha u (u standard normal) scaled so the optimality gap
/// f(start) - f_inf equals `gap` exactly. Requires a positive definite mean
/// Hessian.
Vector gap_normalized_start(const QuadraticProblem& p, double gap,
                            RngStream& rng);

/// Largest eigenvalue of a symmetric matrix by power iteration (with
/// deflation-free shift for the negative end); tolerance 1e-10. Serves as an
/// independent oracle for the eigensolver-based path.
double power_iteration_max_eigenvalue(const Matrix& sym, int max_iters = 5000,
                                      double tol = 1e-10);

/// Plain-text serialization: "fedp3-quadratic 1" header, "n d" line, then per
/// client d rows of the Hessian followed by one row for the linear term.
void save_quadratic(const QuadraticProblem& p, const std::string& path);
QuadraticProblem load_quadratic(const std::string& path);

// ---------------------------------------------------------------------------
// Layered MLP: ordered named weight matrices (in x out, no biases) with ReLU
// on hidden layers and a softmax cross-entropy head.
// ---------------------------------------------------------------------------

enum class Activation { kRelu, kNone };

struct Layer {
  std::string name;
  Matrix weights;  // fan_in x fan_out
  Activation activation = Activation::kRelu;
};

struct LayeredModel {
  std::vector<Layer> layers;  // last layer is the designated output layer

  Index input_dim() const { return layers.front().weights.rows(); }
  Index output_dim() const { return layers.back().weights.cols(); }
  Index param_count() const;
  const Layer& output_layer() const { return layers.back(); }
  const Layer* find(const std::string& name) const;
  Layer* find(const std::string& name);

  /// Unique names, composing shapes, nonempty.
  void validate() const;
};

/// He-style random init over dims {d0, d1, ..., dk}; layers named fc1..fck,
/// ReLU everywhere except the output layer.
LayeredModel make_mlp(const std::vector<Index>& dims, RngStream& rng);

struct Batch {
  Matrix features;          // batch x feature_dim
  std::vector<int> labels;  // values in [0, classes)

  Index size() const { return features.rows(); }
};

struct GradientReport {
  double loss = 0.0;
  std::vector<Matrix> grads;  // shapes mirror the model exactly
};

/// Mean softmax cross-entropy over the batch with exact layer gradients.
GradientReport mlp_loss_and_grad(const LayeredModel& model, const Batch& batch);

double mlp_loss(const LayeredModel& model, const Batch& batch);
double mlp_accuracy(const LayeredModel& model, const Batch& batch);

/// Central-difference check over >= min_coords randomly sampled coordinates;
/// returns the max relative error against the analytic gradient.
double fd_gradient_check(const LayeredModel& model, const Batch& batch,
                         double step, RngStream& rng, int min_coords = 200);

}  // namespace fedp3
