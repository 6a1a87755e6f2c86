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
#include <span>
#include <vector>

#include "fednl/dataset.hpp"
#include "fednl/error.hpp"
#include "fednl/trainer.hpp"

namespace fednl {

inline constexpr double kGammaFloor = 1e-8;

/// How a participant's noise ratio discounts its size.
enum class EffectiveSize {
  kNoiseFree,  // m = n (1 - beta)
  kLiteral,    // m = n beta
};

/// Scalar used for the instantaneous influence of removing a participant.
enum class InfluenceMeasure {
  kLossChange,  // |loss(leave-one-out) - loss(aggregate)| on the server test set
  kParamNorm,   // ||leave-one-out - aggregate||_F
};

inline double effective_size(std::size_t n, double beta, EffectiveSize mode = EffectiveSize::kNoiseFree) {
  return static_cast<double>(n) * (mode == EffectiveSize::kNoiseFree ? 1.0 - beta : beta);
}

/// Sum of w_i * models[i]; weights need not be normalized.
inline ModelParams weighted_sum(std::span<const ModelParams> models, std::span<const double> weights) {
  require(!models.empty() && models.size() == weights.size(), ErrorKind::kAggregation,
          "need one weight per model");
  ModelParams out{Eigen::MatrixXd::Zero(models[0].weights.rows(), models[0].weights.cols())};
  for (std::size_t i = 0; i < models.size(); ++i) {
    require(models[i].weights.rows() == out.weights.rows() && models[i].weights.cols() == out.weights.cols(),
            ErrorKind::kAggregation, "model " + std::to_string(i) + " has a different shape");
    out.weights += weights[i] * models[i].weights;
  }
  return out;
}

/// Size-weighted mean of every model except the excluded one.
inline ModelParams leave_one_out_aggregate(std::span<const ModelParams> models, std::span<const double> sizes,
                                           std::size_t excluded) {
  require(models.size() >= 2, ErrorKind::kDegenerateAggregate, "leave-one-out needs at least 2 participants");
  require(sizes.size() == models.size() && excluded < models.size(), ErrorKind::kDegenerateAggregate,
          "sizes and models disagree");
  double total = 0.0;
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    if (l != excluded) total += sizes[l];
  }
  require(total > 0.0, ErrorKind::kDegenerateAggregate,
          "remaining participants have zero effective size without participant " + std::to_string(excluded));
  std::vector<double> weights(sizes.size(), 0.0);
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    if (l != excluded) weights[l] = sizes[l] / total;
  }
  return weighted_sum(models, weights);
}

/// Per-participant influence history.
struct InfluenceState {
  std::vector<double> previous_gamma;
  std::vector<double> gamma;
  std::vector<double> decay;
  std::vector<double> effective_sizes;

  static InfluenceState start(std::vector<double> effective_sizes) {
    InfluenceState state;
    const std::size_t n = effective_sizes.size();
    state.previous_gamma.assign(n, 0.0);
    state.gamma.assign(n, 0.0);
    state.decay.assign(n, 0.0);
    state.effective_sizes = std::move(effective_sizes);
    return state;
  }

  /// Rolls gamma into previous_gamma at the start of a round.
  void advance() { previous_gamma = gamma; }
};

struct InfluenceConfig {
  InfluenceMeasure measure = InfluenceMeasure::kLossChange;
  double l2_lambda = 0.01;
  int local_epochs = 1;
  double gamma_min = kGammaFloor;
};

/// Contraction of the influence history over E local epochs of step eta on a
/// lambda-strongly-convex loss: (1 - eta lambda)^E clipped to [0, 1].
inline double influence_decay(double eta, double l2_lambda, int local_epochs) {
  return std::clamp(std::pow(1.0 - eta * l2_lambda, local_epochs), 0.0, 1.0);
}

/// gamma_i^t = decay * gamma_i^{t-1} + s_i^t, floored at gamma_min. Updates
/// state.gamma[i] and state.decay[i].
inline double influence(std::size_t i, std::span<const ModelParams> models, const ModelParams& aggregated,
                        const TrainingView& server_test, InfluenceState& state, double eta,
                        const InfluenceConfig& config) {
  require(i < models.size() && state.gamma.size() == models.size(), ErrorKind::kDomain, "participant out of range");
  const ModelParams without = leave_one_out_aggregate(models, state.effective_sizes, i);
  double instantaneous = 0.0;
  if (config.measure == InfluenceMeasure::kLossChange) {
    instantaneous = std::abs(loss(without, server_test, config.l2_lambda) - loss(aggregated, server_test, config.l2_lambda));
  } else {
    instantaneous = (without.weights - aggregated.weights).norm();
  }
  state.decay[i] = influence_decay(eta, config.l2_lambda, config.local_epochs);
  state.gamma[i] = std::max(state.decay[i] * state.previous_gamma[i] + instantaneous, config.gamma_min);
  return state.gamma[i];
}

struct ContributionWeights {
  std::vector<double> epsilon;
};

/// epsilon_i = (1 / gamma_i) / sum_j (1 / gamma_j).
inline ContributionWeights contributions(std::span<const double> gammas) {
  require(!gammas.empty(), ErrorKind::kDomain, "no participants");
  ContributionWeights out;
  out.epsilon.resize(gammas.size());
  double omega = 0.0;
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    require(gammas[i] > 0.0 && std::isfinite(gammas[i]), ErrorKind::kDomain, "gamma must be positive and finite");
    out.epsilon[i] = 1.0 / gammas[i];
    omega += out.epsilon[i];
  }
  for (auto& e : out.epsilon) e /= omega;
  return out;
}

/// Weights proportional to dataset size.
inline ContributionWeights size_weights(std::span<const std::size_t> sizes) {
  double total = 0.0;
  for (auto n : sizes) total += static_cast<double>(n);
  require(total > 0.0, ErrorKind::kDegenerateAggregate, "all participants are empty");
  ContributionWeights out;
  for (auto n : sizes) out.epsilon.push_back(static_cast<double>(n) / total);
  return out;
}

}  // namespace fednl
