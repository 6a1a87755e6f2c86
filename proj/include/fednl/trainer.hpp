/*
 * Copyright 2026 The fednl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fednl/dataset.hpp"
#include "fednl/error.hpp"
#include "fednl/random.hpp"

namespace fednl {

/// Weight parameter matrix of a multinomial logistic model: (d + 1) x c,
/// last row is the bias.
struct ModelParams {
  Eigen::MatrixXd weights;

  static ModelParams zeros(int dim, int classes) { return {Eigen::MatrixXd::Zero(dim + 1, classes)}; }

  /// Entries drawn uniformly from [-range, range].
  static ModelParams random_uniform(int dim, int classes, double range, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "model_init"));
    ModelParams m = zeros(dim, classes);
    for (Eigen::Index col = 0; col < m.weights.cols(); ++col) {
      for (Eigen::Index row = 0; row < m.weights.rows(); ++row) m.weights(row, col) = rng.uniform(-range, range);
    }
    return m;
  }

  int dim() const { return static_cast<int>(weights.rows()) - 1; }
  int classes() const { return static_cast<int>(weights.cols()); }
  bool finite() const { return weights.allFinite(); }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.weights.rows() == b.weights.rows() && a.weights.cols() == b.weights.cols() && a.weights == b.weights;
  }
};

struct LrSchedule {
  enum class Kind { kConstant, kDiminishing };
  Kind kind = Kind::kConstant;
  double eta = 0.05;
  double theta = 0.0;
  double alpha = 0.0;

  static LrSchedule constant(double eta) { return {Kind::kConstant, eta, 0.0, 0.0}; }
  static LrSchedule diminishing(double theta, double alpha) { return {Kind::kDiminishing, 0.0, theta, alpha}; }
};

/// Learning rate at global SGD step t (1-based): eta, or theta / (t + alpha).
inline double lr_at(const LrSchedule& schedule, std::uint64_t t) {
  if (schedule.kind == LrSchedule::Kind::kConstant) return schedule.eta;
  return schedule.theta / (static_cast<double>(t) + schedule.alpha);
}

struct TrainerConfig {
  int local_epochs = 1;
  std::size_t batch_size = 32;
  LrSchedule lr_schedule = LrSchedule::constant(0.05);
  double l2_lambda = 0.01;
  std::uint64_t seed = 0;
};

inline void validate(const TrainerConfig& config) {
  require(config.local_epochs >= 1, ErrorKind::kDomain, "local_epochs must be >= 1");
  require(config.batch_size >= 1, ErrorKind::kDomain, "batch_size must be >= 1");
  require(config.l2_lambda >= 0.0 && std::isfinite(config.l2_lambda), ErrorKind::kDomain, "l2_lambda must be >= 0");
  if (config.lr_schedule.kind == LrSchedule::Kind::kConstant) {
    require(config.lr_schedule.eta > 0.0, ErrorKind::kDomain, "constant learning rate must be > 0");
  } else {
    require(config.lr_schedule.theta > 0.0 && config.lr_schedule.alpha > 0.0, ErrorKind::kDomain,
            "diminishing schedule needs theta > 0 and alpha > 0");
  }
}

// ---------------------------------------------------------------------------
// Loss and gradient of the L2-regularized mean cross-entropy.

namespace detail {

/// Row-wise softmax of the scores, computed with the max-shift.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores) {
  Eigen::MatrixXd p = scores;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    p.row(r).array() -= p.row(r).maxCoeff();
    p.row(r) = p.row(r).array().exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

/// Sum of per-row cross-entropy given scores and targets.
inline double cross_entropy_sum(const Eigen::MatrixXd& scores, std::span<const ClassId> labels) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double peak = scores.row(r).maxCoeff();
    const double lse = peak + std::log((scores.row(r).array() - peak).exp().sum());
    total += lse - scores(r, labels[r]);
  }
  return total;
}

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
  return out;
}

}  // namespace detail

inline double loss(const ModelParams& model, const TrainingView& data, double l2_lambda) {
  require(!data.empty(), ErrorKind::kUndefinedLoss, "loss of an empty dataset is undefined");
  const Eigen::MatrixXd scores = data.design() * model.weights;
  const double ce = detail::cross_entropy_sum(scores, data.labels()) / static_cast<double>(data.size());
  return ce + 0.5 * l2_lambda * model.weights.squaredNorm();
}

inline double loss(const ModelParams& model, const Dataset& data, double l2_lambda) {
  return loss(model, TrainingView(data), l2_lambda);
}

/// Exact gradient of the batch-mean regularized cross-entropy over the given rows.
inline Eigen::MatrixXd gradient(const ModelParams& model, const TrainingView& data, std::span<const std::size_t> batch,
                                double l2_lambda) {
  require(!batch.empty(), ErrorKind::kDomain, "gradient of an empty batch");
  const Eigen::MatrixXd x = detail::gather_rows(data.design(), batch);
  Eigen::MatrixXd residual = detail::softmax_rows(x * model.weights);
  for (std::size_t r = 0; r < batch.size(); ++r) residual(static_cast<Eigen::Index>(r), data.labels()[batch[r]]) -= 1.0;
  return x.transpose() * residual / static_cast<double>(batch.size()) + l2_lambda * model.weights;
}

inline Eigen::MatrixXd full_gradient(const ModelParams& model, const TrainingView& data, double l2_lambda) {
  require(!data.empty(), ErrorKind::kDomain, "gradient of an empty dataset");
  Eigen::MatrixXd residual = detail::softmax_rows(data.design() * model.weights);
  for (std::size_t r = 0; r < data.size(); ++r) residual(static_cast<Eigen::Index>(r), data.labels()[r]) -= 1.0;
  return data.design().transpose() * residual / static_cast<double>(data.size()) + l2_lambda * model.weights;
}

// ---------------------------------------------------------------------------
// Prediction

/// Argmax of the class scores; ties resolve to the lowest class id.
inline ClassId predict(const ModelParams& model, std::span<const double> features) {
  const int d = model.dim();
  ClassId best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < model.classes(); ++k) {
    double s = model.weights(d, k);
    for (int f = 0; f < d; ++f) s += features[f] * model.weights(f, k);
    if (s > best_score) {
      best_score = s;
      best = k;
    }
  }
  return best;
}

inline ClassId predict(const ModelParams& model, const Instance& instance) { return predict(model, instance.features); }

inline std::vector<ClassId> predict_all(const ModelParams& model, const Dataset& data) {
  std::vector<ClassId> out;
  out.reserve(data.size());
  for (const auto& inst : data.instances) out.push_back(predict(model, inst));
  return out;
}

// ---------------------------------------------------------------------------
// Local training

struct TrainResult {
  ModelParams model;
  double final_loss = 0.0;
  std::uint64_t steps = 0;
};

inline std::uint64_t steps_per_epoch(std::size_t n, std::size_t batch_size) {
  const std::size_t b = std::min(batch_size, n);
  return (n + b - 1) / b;
}

/// E epochs of mini-batch SGD. Each epoch draws a permutation and walks it in
/// contiguous batches; step s of this call uses lr_at(global_step_base + s).
inline TrainResult train_local(ModelParams model, const TrainingView& data, const TrainerConfig& config,
                               std::uint64_t global_step_base = 0) {
  validate(config);
  require(!data.empty(), ErrorKind::kUndefinedLoss, "cannot train on an empty dataset");
  const std::size_t n = data.size();
  const std::size_t b = std::min(config.batch_size, n);
  Rng rng(derive_seed(config.seed, "train_local"));
  std::uint64_t step = 0;
  std::vector<std::size_t> batch;
  batch.reserve(b);
  for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
    const auto order = rng.permutation(n);
    for (std::size_t start = 0; start < n; start += b) {
      ++step;
      const std::size_t stop = std::min(start + b, n);
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(stop));
      const double eta = lr_at(config.lr_schedule, global_step_base + step);
      model.weights -= eta * gradient(model, data, batch, config.l2_lambda);
      if (!model.finite()) {
        fail(ErrorKind::kDivergence, "non-finite weights at step " + std::to_string(global_step_base + step));
      }
    }
  }
  const double final_loss = loss(model, data, config.l2_lambda);
  require(std::isfinite(final_loss), ErrorKind::kDivergence,
          "non-finite loss at step " + std::to_string(global_step_base + step));
  return {std::move(model), final_loss, step};
}

inline TrainResult train_local(ModelParams model, const Dataset& data, const TrainerConfig& config,
                               std::uint64_t global_step_base = 0) {
  return train_local(std::move(model), TrainingView(data), config, global_step_base);
}

// ---------------------------------------------------------------------------
// Exact minimizer

struct OptimumResult {
  ModelParams model;
  double loss = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
};

/// Hessian of the regularized loss w.r.t. the column-major vectorized weights.
inline Eigen::MatrixXd hessian(const ModelParams& model, const TrainingView& data, double l2_lambda) {
  const Eigen::MatrixXd& x = data.design();
  const Eigen::Index p = x.cols();
  const Eigen::Index c = model.weights.cols();
  const Eigen::MatrixXd prob = detail::softmax_rows(x * model.weights);
  const double inv_n = 1.0 / static_cast<double>(data.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p * c, p * c);
  for (Eigen::Index k = 0; k < c; ++k) {
    for (Eigen::Index l = k; l < c; ++l) {
      Eigen::VectorXd w = -prob.col(k).cwiseProduct(prob.col(l));
      if (k == l) w += prob.col(k);
      const Eigen::MatrixXd block = x.transpose() * w.asDiagonal() * x * inv_n;
      h.block(k * p, l * p, p, p) = block;
      if (k != l) h.block(l * p, k * p, p, p) = block;
    }
  }
  h.diagonal().array() += l2_lambda;
  return h;
}

/// Damped Newton with backtracking; converges to the minimizer of the
/// regularized loss (or a minimizer when l2_lambda = 0 and one exists).
inline OptimumResult fit_optimum(const TrainingView& data, double l2_lambda, double tol = 1e-6, int max_iter = 200,
                                 ModelParams start = {}) {
  require(!data.empty(), ErrorKind::kUndefinedLoss, "cannot optimize over an empty dataset");
  ModelParams model = start.weights.size() ? std::move(start) : ModelParams::zeros(data.dim(), data.class_count());
  double current = loss(model, data, l2_lambda);
  OptimumResult out;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd g = full_gradient(model, data, l2_lambda);
    out.grad_norm = g.norm();
    out.iterations = it;
    if (out.grad_norm <= tol) break;
    Eigen::MatrixXd h = hessian(model, data, l2_lambda);
    h.diagonal().array() += 1e-10;
    const Eigen::VectorXd g_vec = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
    const Eigen::VectorXd dir_vec = -h.ldlt().solve(g_vec);
    const Eigen::MatrixXd dir = Eigen::Map<const Eigen::MatrixXd>(dir_vec.data(), g.rows(), g.cols());
    const double slope = g_vec.dot(dir_vec);
    double step = 1.0;
    ModelParams trial = model;
    for (int ls = 0; ls < 60; ++ls) {
      trial.weights = model.weights + step * dir;
      const double value = loss(trial, data, l2_lambda);
      if (value <= current + 1e-4 * step * slope) break;
      step *= 0.5;
    }
    model = std::move(trial);
    current = loss(model, data, l2_lambda);
  }
  out.grad_norm = full_gradient(model, data, l2_lambda).norm();
  out.model = std::move(model);
  out.loss = current;
  return out;
}

// ---------------------------------------------------------------------------
// Text format:
//   fednl-model 1
//   shape <rows> <cols>
//   <row-major entries, one matrix row per line>

inline void write_model(std::ostream& out, const ModelParams& model) {
  out << "fednl-model 1\n";
  out << "shape " << model.weights.rows() << ' ' << model.weights.cols() << '\n';
  out << std::setprecision(17);
  for (Eigen::Index r = 0; r < model.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < model.weights.cols(); ++c) out << (c ? " " : "") << model.weights(r, c);
    out << '\n';
  }
}

inline std::string model_to_string(const ModelParams& model) {
  std::ostringstream out;
  write_model(out, model);
  return out.str();
}

inline ModelParams read_model(std::istream& in) {
  std::string magic;
  std::string key;
  int version = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  in >> magic >> version >> key >> rows >> cols;
  require(in && magic == "fednl-model" && version == 1 && key == "shape" && rows >= 2 && cols >= 1,
          ErrorKind::kParse, "not a version-1 model file");
  ModelParams model{Eigen::MatrixXd(rows, cols)};
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      require(static_cast<bool>(in >> model.weights(r, c)), ErrorKind::kParse, "truncated model file");
    }
  }
  return model;
}

inline void save_model(const std::string& path, const ModelParams& model) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write '" + path + "'");
  write_model(out, model);
}

inline ModelParams load_model(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kNotFound, "cannot open '" + path + "'");
  return read_model(in);
}

}  // namespace fednl
