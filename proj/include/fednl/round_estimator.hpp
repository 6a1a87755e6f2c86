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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fednl/dataset.hpp"
#include "fednl/engine.hpp"
#include "fednl/error.hpp"
#include "fednl/random.hpp"
#include "fednl/trainer.hpp"

namespace fednl {

struct SmoothnessParams {
  enum class Provenance { kDeclared, kMeasured };
  double L = 1.0;
  double mu = 1.0;
  Provenance provenance = Provenance::kDeclared;
};

/// Inputs to the round estimate. `alpha` is derived, see round_alpha().
struct RoundParams {
  int local_epochs = 1;
  double q_o = 0.01;
  double B = 0.0;
  double init_gap = 0.0;
  bool alpha_minus_one = false;
};

/// mu is the L2 coefficient; L is the largest gradient-difference ratio seen
/// over random weight pairs, inflated by 1.2 and floored at mu.
inline SmoothnessParams measure_smoothness(const TrainingView& data, const TrainerConfig& config, std::uint64_t seed,
                                           int pairs = 100) {
  require(!data.empty(), ErrorKind::kMeasurement, "cannot measure smoothness on an empty dataset");
  require(config.l2_lambda > 0.0, ErrorKind::kNoStrongConvexity, "l2_lambda = 0 gives no strong convexity");
  Rng rng(derive_seed(seed, "smoothness"));
  const Eigen::Index rows = data.dim() + 1;
  const Eigen::Index cols = data.class_count();
  double sup = 0.0;
  for (int p = 0; p < pairs; ++p) {
    // Spread the base point over several scales; curvature peaks near w = 0.
    const double scale = std::pow(10.0, rng.uniform(-3.0, 0.0));
    ModelParams a{Eigen::MatrixXd(rows, cols)};
    ModelParams b{Eigen::MatrixXd(rows, cols)};
    for (Eigen::Index i = 0; i < a.weights.size(); ++i) {
      a.weights.data()[i] = scale * rng.normal();
      b.weights.data()[i] = a.weights.data()[i] + 1e-3 * rng.normal();
    }
    const double dw = (a.weights - b.weights).norm();
    if (dw == 0.0) continue;
    const double dg = (full_gradient(a, data, config.l2_lambda) - full_gradient(b, data, config.l2_lambda)).norm();
    sup = std::max(sup, dg / dw);
  }
  return {std::max(1.2 * sup, config.l2_lambda), config.l2_lambda, SmoothnessParams::Provenance::kMeasured};
}

struct BComponents {
  std::vector<double> sigma_sq;
  double G_sq = 0.0;
  /// max(0, L* - sum_i eps_i L_i*)
  double Gamma = 0.0;
  /// L* - sum_i L_i*, kept for reference.
  double Gamma_unweighted = 0.0;
  double pooled_optimum_loss = 0.0;
  std::vector<double> participant_optimum_loss;
  ModelParams pooled_optimum;
};

inline Dataset pool_datasets(std::span<const Dataset> parts) {
  require(!parts.empty(), ErrorKind::kMeasurement, "no datasets to pool");
  Dataset pooled = parts[0].like("pooled");
  for (const auto& p : parts) pooled.instances.insert(pooled.instances.end(), p.instances.begin(), p.instances.end());
  return pooled;
}

inline OptimumResult checked_optimum(const TrainingView& data, double l2, const std::string& what) {
  auto opt = fit_optimum(data, l2, 1e-6, 200);
  require(opt.grad_norm <= 1e-4, ErrorKind::kMeasurement,
          what + " optimum did not converge (gradient norm " + std::to_string(opt.grad_norm) + ")");
  return opt;
}

/// Gradient variance and norm bounds at the given per-participant models plus
/// the non-iid gap. Both bounds are maxima over `batches` sampled mini-batches.
inline BComponents measure_b_components(std::span<const Dataset> participants, std::span<const ModelParams> models,
                                        std::span<const double> epsilon, const TrainerConfig& config,
                                        std::uint64_t seed, int batches = 50) {
  require(participants.size() == models.size() && participants.size() == epsilon.size(), ErrorKind::kMeasurement,
          "participants, models and weights disagree in count");
  BComponents out;
  const double l2 = config.l2_lambda;
  for (std::size_t i = 0; i < participants.size(); ++i) {
    const TrainingView view(participants[i]);
    require(!view.empty(), ErrorKind::kMeasurement, "participant " + std::to_string(i) + " is empty");
    const Eigen::MatrixXd full = full_gradient(models[i], view, l2);
    const std::size_t b = std::min(config.batch_size, view.size());
    Rng rng(derive_seed(seed, "b_components", i));
    double sigma = 0.0;
    for (int s = 0; s < batches; ++s) {
      const auto batch = rng.sample_without_replacement(view.size(), b);
      const Eigen::MatrixXd g = gradient(models[i], view, batch, l2);
      sigma = std::max(sigma, (g - full).squaredNorm());
      out.G_sq = std::max(out.G_sq, g.squaredNorm());
    }
    out.sigma_sq.push_back(sigma);
    const auto local_opt = checked_optimum(view, l2, "participant " + std::to_string(i));
    out.participant_optimum_loss.push_back(local_opt.loss);
  }
  const Dataset pooled = pool_datasets(participants);
  const auto opt = checked_optimum(TrainingView(pooled), l2, "pooled");
  out.pooled_optimum = opt.model;
  out.pooled_optimum_loss = opt.loss;
  double weighted = 0.0;
  double unweighted = 0.0;
  for (std::size_t i = 0; i < participants.size(); ++i) {
    weighted += epsilon[i] * out.participant_optimum_loss[i];
    unweighted += out.participant_optimum_loss[i];
  }
  out.Gamma = std::max(0.0, opt.loss - weighted);
  out.Gamma_unweighted = opt.loss - unweighted;
  return out;
}

struct BBreakdown {
  double variance = 0.0;       // sum_i eps_i^2 sigma_i^2
  double heterogeneity = 0.0;  // 6 L Gamma
  double drift = 0.0;          // 8 (E - 1)^2 G^2
  double total = 0.0;
};

inline BBreakdown compute_B(std::span<const double> epsilon, std::span<const double> sigma_sq, double L, double Gamma,
                            int local_epochs, double G_sq) {
  require(epsilon.size() == sigma_sq.size(), ErrorKind::kDomain, "epsilon and sigma_sq disagree in length");
  require(L >= 0.0 && Gamma >= 0.0 && G_sq >= 0.0 && local_epochs >= 1, ErrorKind::kDomain,
          "B components must be non-negative");
  BBreakdown b;
  for (std::size_t i = 0; i < epsilon.size(); ++i) {
    require(sigma_sq[i] >= 0.0, ErrorKind::kDomain, "sigma_sq must be non-negative");
    b.variance += epsilon[i] * epsilon[i] * sigma_sq[i];
  }
  b.heterogeneity = 6.0 * L * Gamma;
  const double e1 = static_cast<double>(local_epochs - 1);
  b.drift = 8.0 * e1 * e1 * G_sq;
  b.total = b.variance + b.heterogeneity + b.drift;
  return b;
}

/// max{8L/mu, E}, minus one in the proof's variant.
inline double round_alpha(const SmoothnessParams& smooth, int local_epochs, bool minus_one = false) {
  const double alpha = std::max(8.0 * smooth.L / smooth.mu, static_cast<double>(local_epochs));
  return minus_one ? alpha - 1.0 : alpha;
}

struct RoundEstimate {
  double alpha = 0.0;
  double raw = 0.0;
  std::uint64_t rounds = 1;
};

/// R = (1/E) [ L / (2 mu^2 q_o) (4B + mu^2 alpha E||w_1 - w*||^2) + 1 - alpha ],
/// clamped to an integer >= 1.
inline RoundEstimate estimate_rounds(const SmoothnessParams& smooth, const RoundParams& params) {
  require(params.q_o > 0.0, ErrorKind::kDomain, "q_o must be positive");
  require(params.local_epochs >= 1, ErrorKind::kDomain, "E must be >= 1");
  require(smooth.mu > 0.0 && smooth.L >= smooth.mu, ErrorKind::kDomain, "need L >= mu > 0");
  RoundEstimate est;
  est.alpha = round_alpha(smooth, params.local_epochs, params.alpha_minus_one);
  const double mu2 = smooth.mu * smooth.mu;
  const double bracket =
      smooth.L / (2.0 * mu2 * params.q_o) * (4.0 * params.B + mu2 * est.alpha * params.init_gap) + 1.0 - est.alpha;
  est.raw = bracket / params.local_epochs;
  const double clamped = std::max(1.0, std::ceil(est.raw));
  est.rounds = clamped >= 1.8e19 ? std::numeric_limits<std::uint64_t>::max() : static_cast<std::uint64_t>(clamped);
  return est;
}

/// Mean of ||w_1 - w*||^2 over `draws` server initializations.
inline double measure_init_gap(const ModelParams& optimum, double init_range, std::uint64_t seed, int draws = 10) {
  double total = 0.0;
  for (int d = 0; d < draws; ++d) {
    const auto w1 = ModelParams::random_uniform(optimum.dim(), optimum.classes(), init_range,
                                                derive_seed(seed, "init_gap", static_cast<std::uint64_t>(d)));
    total += (w1.weights - optimum.weights).squaredNorm();
  }
  return total / draws;
}

struct RateFit {
  double slope = 0.0;
  std::size_t points = 0;
  /// Points whose gap was non-positive and got clipped to 1e-12.
  std::size_t clipped = 0;
};

/// Least-squares slope of log(loss - optimum) against log(steps) over the
/// tail half of the sequence.
inline RateFit verify_rate(std::span<const double> losses, std::span<const double> steps, double optimum_loss) {
  require(losses.size() == steps.size() && losses.size() >= 2, ErrorKind::kDomain,
          "need at least two (loss, steps) points");
  RateFit fit;
  const std::size_t start = losses.size() / 2;
  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t t = start; t < losses.size(); ++t) {
    double gap = losses[t] - optimum_loss;
    if (gap <= 0.0) {
      gap = 1e-12;
      ++fit.clipped;
    }
    require(steps[t] > 0.0, ErrorKind::kDomain, "step counts must be positive");
    xs.push_back(std::log(steps[t]));
    ys.push_back(std::log(gap));
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    mx += xs[k] / n;
    my += ys[k] / n;
  }
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sxy += (xs[k] - mx) * (ys[k] - my);
    sxx += (xs[k] - mx) * (xs[k] - mx);
  }
  require(sxx > 0.0, ErrorKind::kDomain, "step counts must not all be equal");
  fit.slope = sxy / sxx;
  fit.points = xs.size();
  return fit;
}

inline RateFit verify_rate(const RunReport& run, double optimum_loss) {
  std::vector<double> losses;
  std::vector<double> steps;
  for (const auto& rec : run.records) {
    losses.push_back(rec.aggregate_loss);
    steps.push_back(static_cast<double>(rec.steps));
  }
  return verify_rate(losses, steps, optimum_loss);
}

}  // namespace fednl
