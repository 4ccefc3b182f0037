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

#include "fedp3/objective.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace fedp3 {

namespace {

void check_client(const QuadraticProblem& p, int client) {
  require(client >= 0 && client < p.n_clients(),
          "quadratic: client index out of range");
}

void check_dim(const QuadraticProblem& p, const Vector& w) {
  require_shape(w.size() == p.dim(),
                "quadratic: vector length does not match problem dim");
}

/// Infimum of 1/2 w'Lw - w'b for symmetric PSD L.
double quadratic_infimum(const Matrix& hessian, const Vector& linear) {
  if (linear.isZero(0.0)) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(hessian);
  const Vector evals = es.eigenvalues();
  const double lmax = std::max(evals.cwiseAbs().maxCoeff(), 1.0);
  const double cutoff = 1e-10 * lmax;
  const Vector coeffs = es.eigenvectors().transpose() * linear;
  double value = 0.0;
  double off_range_sq = 0.0;
  for (Index k = 0; k < evals.size(); ++k) {
    if (evals[k] > cutoff) {
      value -= 0.5 * coeffs[k] * coeffs[k] / evals[k];
    } else {
      off_range_sq += coeffs[k] * coeffs[k];
    }
  }
  if (off_range_sq > cutoff * cutoff * (1.0 + linear.squaredNorm())) {
    throw UnboundedBelowError(
        "quadratic infimum: singular Hessian with a linear term outside its "
        "range; the objective is unbounded below");
  }
  return value;
}

}  // namespace

Matrix QuadraticProblem::mean_hessian() const {
  Matrix mean = Matrix::Zero(dim(), dim());
  for (const Matrix& h : hessians) mean += h;
  return mean / static_cast<double>(n_clients());
}

Vector QuadraticProblem::mean_linear() const {
  Vector mean = Vector::Zero(dim());
  for (const Vector& b : linear_terms) mean += b;
  return mean / static_cast<double>(n_clients());
}

QuadraticProblem QuadraticProblem::create(std::vector<Matrix> hessians,
                                          std::vector<Vector> linear_terms) {
  require(!hessians.empty(), "quadratic: need at least one client");
  require(hessians.size() == linear_terms.size(),
          "quadratic: hessian/linear term count mismatch");
  const Index d = hessians[0].rows();
  for (std::size_t i = 0; i < hessians.size(); ++i) {
    const Matrix& h = hessians[i];
    require_shape(h.rows() == d && h.cols() == d,
                  "quadratic: all Hessians must be d x d");
    require_shape(linear_terms[i].size() == d,
                  "quadratic: linear terms must have length d");
    require((h - h.transpose()).cwiseAbs().maxCoeff() <= 1e-10,
            "quadratic: Hessian " + std::to_string(i) + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::EigenvaluesOnly);
    require(es.eigenvalues().minCoeff() >= -1e-10,
            "quadratic: Hessian " + std::to_string(i) +
                " has a negative eigenvalue");
  }
  QuadraticProblem p;
  p.hessians = std::move(hessians);
  p.linear_terms = std::move(linear_terms);
  return p;
}

QuadraticProblem random_quadratic(int n_clients, Index dim, double ridge,
                                  double linear_scale, RngStream& rng) {
  require(n_clients >= 1 && dim >= 1, "random_quadratic: bad sizes");
  std::vector<Matrix> hessians;
  std::vector<Vector> linears;
  for (int i = 0; i < n_clients; ++i) {
    Matrix a(dim, dim);
    for (Index r = 0; r < dim; ++r)
      for (Index c = 0; c < dim; ++c) a(r, c) = normal_draw(rng);
    Matrix h = a.transpose() * a / static_cast<double>(dim);
    h += ridge * Matrix::Identity(dim, dim);
    h = ((h + h.transpose()) / 2.0).eval();  // kill rounding asymmetry
    Vector b = Vector::Zero(dim);
    if (linear_scale != 0.0) {
      for (Index r = 0; r < dim; ++r) b[r] = linear_scale * normal_draw(rng);
    }
    hessians.push_back(std::move(h));
    linears.push_back(std::move(b));
  }
  return QuadraticProblem::create(std::move(hessians), std::move(linears));
}

Vector quad_local_grad(const QuadraticProblem& p, int client,
                       const Vector& w) {
  check_client(p, client);
  check_dim(p, w);
  return p.hessians[static_cast<std::size_t>(client)] * w -
         p.linear_terms[static_cast<std::size_t>(client)];
}

double quad_value(const QuadraticProblem& p, int client, const Vector& w) {
  check_client(p, client);
  check_dim(p, w);
  const auto& h = p.hessians[static_cast<std::size_t>(client)];
  const auto& b = p.linear_terms[static_cast<std::size_t>(client)];
  return 0.5 * w.dot(h * w) - w.dot(b);
}

double quad_global_value(const QuadraticProblem& p, const Vector& w) {
  check_dim(p, w);
  double sum = 0.0;
  for (int i = 0; i < p.n_clients(); ++i) sum += quad_value(p, i, w);
  return sum / static_cast<double>(p.n_clients());
}

Vector quad_global_grad(const QuadraticProblem& p, const Vector& w) {
  check_dim(p, w);
  Vector g = Vector::Zero(p.dim());
  for (int i = 0; i < p.n_clients(); ++i) g += quad_local_grad(p, i, w);
  return g / static_cast<double>(p.n_clients());
}

double quad_f_inf(const QuadraticProblem& p) {
  return quadratic_infimum(p.mean_hessian(), p.mean_linear());
}

double quad_client_f_inf(const QuadraticProblem& p, int client) {
  check_client(p, client);
  return quadratic_infimum(p.hessians[static_cast<std::size_t>(client)],
                           p.linear_terms[static_cast<std::size_t>(client)]);
}

double quad_common_f_inf(const QuadraticProblem& p) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < p.n_clients(); ++i)
    best = std::min(best, quad_client_f_inf(p, i));
  return best;
}

SmoothnessConstants smoothness_constants(const QuadraticProblem& p) {
  SmoothnessConstants out;
  for (const Matrix& h : p.hessians) {
    require((h - h.transpose()).cwiseAbs().maxCoeff() <= 1e-10,
            "smoothness_constants: Hessian is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::EigenvaluesOnly);
    out.per_client.push_back(es.eigenvalues().maxCoeff());
  }
  for (double l : out.per_client) {
    out.mean += l;
    out.max = std::max(out.max, l);
  }
  out.mean /= static_cast<double>(out.per_client.size());
  return out;
}

Vector gap_normalized_start(const QuadraticProblem& p, double gap,
                            RngStream& rng) {
  require(gap > 0.0, "gap_normalized_start: gap must be positive");
  const Matrix l_bar = p.mean_hessian();
  Eigen::LDLT<Matrix> solver(l_bar);
  const Vector w_star = solver.solve(p.mean_linear());
  Vector u(p.dim());
  for (Index j = 0; j < p.dim(); ++j) u[j] = normal_draw(rng);
  const double q = 0.5 * u.dot(l_bar * u);
  require(q > 1e-300, "gap_normalized_start: degenerate direction");
  return w_star + std::sqrt(gap / q) * u;
}

double power_iteration_max_eigenvalue(const Matrix& sym, int max_iters,
                                      double tol) {
  require(sym.rows() == sym.cols(), "power iteration: matrix must be square");
  // Shift by a Gershgorin bound so the dominant eigenvalue of (A + sI) is
  // the one with the largest algebraic value of A.
  const double shift = sym.cwiseAbs().rowwise().sum().maxCoeff();
  const Matrix shifted = sym + shift * Matrix::Identity(sym.rows(), sym.cols());
  Vector v = Vector::Ones(sym.rows()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vector next = shifted * v;
    const double norm = next.norm();
    if (norm == 0.0) return -shift;
    next /= norm;
    const double next_lambda = next.dot(shifted * next);
    if (std::abs(next_lambda - lambda) <= tol * std::max(1.0, norm)) {
      return next_lambda - shift;
    }
    lambda = next_lambda;
    v = next;
  }
  return lambda - shift;
}

void save_quadratic(const QuadraticProblem& p, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "save_quadratic: cannot open " + path);
  out.precision(17);
  out << "fedp3-quadratic 1\n";
  out << p.n_clients() << " " << p.dim() << "\n";
  for (int i = 0; i < p.n_clients(); ++i) {
    const Matrix& h = p.hessians[static_cast<std::size_t>(i)];
    for (Index r = 0; r < h.rows(); ++r) {
      for (Index c = 0; c < h.cols(); ++c) {
        out << h(r, c) << (c + 1 == h.cols() ? "" : " ");
      }
      out << "\n";
    }
    const Vector& b = p.linear_terms[static_cast<std::size_t>(i)];
    for (Index r = 0; r < b.size(); ++r) {
      out << b[r] << (r + 1 == b.size() ? "" : " ");
    }
    out << "\n";
  }
  require(out.good(), "save_quadratic: write failed for " + path);
}

QuadraticProblem load_quadratic(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_quadratic: cannot open " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  require(magic == "fedp3-quadratic" && version == 1,
          "load_quadratic: bad header in " + path);
  int n = 0;
  Index d = 0;
  in >> n >> d;
  require(n >= 1 && d >= 1, "load_quadratic: bad sizes in " + path);
  std::vector<Matrix> hessians;
  std::vector<Vector> linears;
  for (int i = 0; i < n; ++i) {
    Matrix h(d, d);
    for (Index r = 0; r < d; ++r)
      for (Index c = 0; c < d; ++c) in >> h(r, c);
    Vector b(d);
    for (Index r = 0; r < d; ++r) in >> b[r];
    require(in.good() || in.eof(), "load_quadratic: truncated file " + path);
    hessians.push_back(std::move(h));
    linears.push_back(std::move(b));
  }
  return QuadraticProblem::create(std::move(hessians), std::move(linears));
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

Index LayeredModel::param_count() const {
  Index total = 0;
  for (const Layer& l : layers) total += l.weights.size();
  return total;
}

const Layer* LayeredModel::find(const std::string& name) const {
  for (const Layer& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

Layer* LayeredModel::find(const std::string& name) {
  for (Layer& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

void LayeredModel::validate() const {
  require(!layers.empty(), "model: needs at least one layer");
  std::set<std::string> names;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    require(names.insert(layers[i].name).second,
            "model: duplicate layer name " + layers[i].name);
    if (i + 1 < layers.size()) {
      require_shape(layers[i].weights.cols() == layers[i + 1].weights.rows(),
                    "model: layer shapes do not compose at " + layers[i].name);
    }
  }
}

LayeredModel make_mlp(const std::vector<Index>& dims, RngStream& rng) {
  require(dims.size() >= 2, "make_mlp: need input and output dims");
  LayeredModel model;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.name = "fc" + std::to_string(l + 1);
    const bool is_output = (l + 2 == dims.size());
    layer.activation = is_output ? Activation::kNone : Activation::kRelu;
    const double fan_in = static_cast<double>(dims[l]);
    const double sigma =
        is_output ? std::sqrt(1.0 / fan_in) : std::sqrt(2.0 / fan_in);
    layer.weights = Matrix(dims[l], dims[l + 1]);
    for (Index r = 0; r < dims[l]; ++r)
      for (Index c = 0; c < dims[l + 1]; ++c)
        layer.weights(r, c) = sigma * normal_draw(rng);
    model.layers.push_back(std::move(layer));
  }
  model.validate();
  return model;
}

namespace {

void check_batch(const LayeredModel& model, const Batch& batch) {
  require(batch.size() > 0, "mlp: empty batch");
  require_shape(batch.features.cols() == model.input_dim(),
                "mlp: feature dim does not match the input layer");
  require(static_cast<Index>(batch.labels.size()) == batch.size(),
          "mlp: label count does not match batch size");
  for (int y : batch.labels) {
    require(y >= 0 && static_cast<Index>(y) < model.output_dim(),
            "mlp: label out of range");
  }
}

/// Row-wise softmax probabilities and the mean cross-entropy loss.
double softmax_cross_entropy(const Matrix& logits,
                             const std::vector<int>& labels, Matrix* probs) {
  const Index batch = logits.rows();
  Matrix p = logits;
  double loss = 0.0;
  for (Index r = 0; r < batch; ++r) {
    const double mx = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - mx).exp();
    const double z = p.row(r).sum();
    p.row(r) /= z;
    loss += std::log(z) + mx - logits(r, labels[static_cast<std::size_t>(r)]);
  }
  if (probs) *probs = std::move(p);
  return loss / static_cast<double>(batch);
}

}  // namespace

GradientReport mlp_loss_and_grad(const LayeredModel& model,
                                 const Batch& batch) {
  model.validate();
  check_batch(model, batch);
  const std::size_t n_layers = model.layers.size();
  std::vector<Matrix> pre(n_layers);   // pre-activation per layer
  std::vector<Matrix> post(n_layers);  // post-activation per layer
  Matrix h = batch.features;
  for (std::size_t l = 0; l < n_layers; ++l) {
    pre[l] = h * model.layers[l].weights;
    post[l] = model.layers[l].activation == Activation::kRelu
                  ? pre[l].cwiseMax(0.0)
                  : pre[l];
    h = post[l];
  }

  Matrix probs;
  GradientReport report;
  report.loss = softmax_cross_entropy(pre.back(), batch.labels, &probs);

  // Backward pass: dZ for the output then chain through ReLU masks.
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  Matrix dz = probs;
  for (Index r = 0; r < batch.size(); ++r) {
    dz(r, batch.labels[static_cast<std::size_t>(r)]) -= 1.0;
  }
  dz *= inv_batch;

  report.grads.resize(n_layers);
  for (std::size_t l = n_layers; l-- > 0;) {
    const Matrix& input = l == 0 ? batch.features : post[l - 1];
    report.grads[l] = input.transpose() * dz;
    if (l > 0) {
      Matrix dh = dz * model.layers[l].weights.transpose();
      if (model.layers[l - 1].activation == Activation::kRelu) {
        dz = dh.cwiseProduct(
            (pre[l - 1].array() > 0.0).cast<double>().matrix());
      } else {
        dz = std::move(dh);
      }
    }
  }
  return report;
}

double mlp_loss(const LayeredModel& model, const Batch& batch) {
  model.validate();
  check_batch(model, batch);
  Matrix h = batch.features;
  for (const Layer& layer : model.layers) {
    h *= layer.weights;
    if (layer.activation == Activation::kRelu) h = h.cwiseMax(0.0);
  }
  return softmax_cross_entropy(h, batch.labels, nullptr);
}

double mlp_accuracy(const LayeredModel& model, const Batch& batch) {
  model.validate();
  check_batch(model, batch);
  Matrix h = batch.features;
  for (const Layer& layer : model.layers) {
    h *= layer.weights;
    if (layer.activation == Activation::kRelu) h = h.cwiseMax(0.0);
  }
  Index hits = 0;
  for (Index r = 0; r < h.rows(); ++r) {
    Index argmax = 0;
    h.row(r).maxCoeff(&argmax);
    if (argmax == batch.labels[static_cast<std::size_t>(r)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(h.rows());
}

double fd_gradient_check(const LayeredModel& model, const Batch& batch,
                         double step, RngStream& rng, int min_coords) {
  require(step > 0.0, "fd_gradient_check: step must be positive");
  const GradientReport analytic = mlp_loss_and_grad(model, batch);
  LayeredModel probe = model;
  const Index total = model.param_count();
  const Index n_checks = std::min<Index>(total, std::max(min_coords, 1));

  // Sample coordinates without replacement across the whole parameter vector.
  std::vector<std::int64_t> coords = sample_distinct(total, n_checks, rng);

  double max_rel = 0.0;
  for (std::int64_t flat : coords) {
    std::size_t l = 0;
    Index offset = flat;
    while (offset >= probe.layers[l].weights.size()) {
      offset -= probe.layers[l].weights.size();
      ++l;
    }
    double* w = probe.layers[l].weights.data() + offset;
    const double saved = *w;
    *w = saved + step;
    const double up = mlp_loss(probe, batch);
    *w = saved - step;
    const double down = mlp_loss(probe, batch);
    *w = saved;
    const double fd = (up - down) / (2.0 * step);
    const double an = analytic.grads[l].data()[offset];
    const double scale = std::max({1e-6, std::abs(fd), std::abs(an)});
    max_rel = std::max(max_rel, std::abs(fd - an) / scale);
  }
  return max_rel;
}

}  // namespace fedp3
