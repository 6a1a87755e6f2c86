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
#include "fednl/contribution.hpp"

#include <gtest/gtest.h>

#include <numeric>

namespace fednl {
namespace {

ModelParams filled(double v) {
  ModelParams m = ModelParams::zeros(2, 3);
  m.weights.setConstant(v);
  return m;
}

ModelParams random_model(Rng& rng) {
  ModelParams m = ModelParams::zeros(2, 3);
  for (Eigen::Index i = 0; i < m.weights.size(); ++i) m.weights.data()[i] = rng.normal();
  return m;
}

Dataset small_test_set() {
  Dataset ds = synth_gaussian(3, 10, 2, 4.0, 1);
  return ds;
}

TEST(EffectiveSize, Modes) {
  EXPECT_DOUBLE_EQ(effective_size(100, 0.2), 80.0);
  EXPECT_DOUBLE_EQ(effective_size(100, 0.2, EffectiveSize::kLiteral), 20.0);
}

TEST(LeaveOneOut, TwoEqualParticipants) {
  const std::vector<ModelParams> models{filled(1.0), filled(5.0)};
  const std::vector<double> sizes{3.0, 3.0};
  EXPECT_EQ(leave_one_out_aggregate(models, sizes, 0), models[1]);
  EXPECT_EQ(leave_one_out_aggregate(models, sizes, 1), models[0]);
}

TEST(LeaveOneOut, IdenticalModels) {
  const std::vector<ModelParams> models(3, filled(0.7));
  const std::vector<double> sizes{1.0, 2.0, 3.0};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(leave_one_out_aggregate(models, sizes, i).weights.isApprox(models[0].weights, 1e-15));
  }
}

TEST(LeaveOneOut, MatchesDirectFormula) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(5);
    std::vector<ModelParams> models;
    std::vector<double> sizes;
    for (std::size_t i = 0; i < n; ++i) {
      models.push_back(random_model(rng));
      sizes.push_back(1.0 + 100.0 * rng.uniform01());
    }
    const std::size_t ex = rng.below(n);
    Eigen::MatrixXd direct = Eigen::MatrixXd::Zero(3, 3);
    double total = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
      if (l == ex) continue;
      direct += sizes[l] * models[l].weights;
      total += sizes[l];
    }
    direct /= total;
    EXPECT_LE((leave_one_out_aggregate(models, sizes, ex).weights - direct).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(LeaveOneOut, SizesTenThirty) {
  const std::vector<ModelParams> models{filled(4.0), filled(8.0)};
  const std::vector<double> sizes{10.0, 30.0};
  const std::vector<double> all{0.25, 0.75};
  EXPECT_DOUBLE_EQ(weighted_sum(models, all).weights(0, 0), 0.25 * 4.0 + 0.75 * 8.0);
  EXPECT_DOUBLE_EQ(leave_one_out_aggregate(models, sizes, 0).weights(0, 0), 8.0);
}

TEST(LeaveOneOut, Degenerate) {
  const std::vector<ModelParams> models{filled(1.0), filled(2.0)};
  try {
    leave_one_out_aggregate(models, std::vector<double>{5.0, 0.0}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateAggregate);
  }
  EXPECT_THROW(leave_one_out_aggregate(std::vector<ModelParams>{filled(1.0)}, std::vector<double>{1.0}, 0), Error);
}

TEST(Influence, IdenticalModelsFloor) {
  const Dataset test = small_test_set();
  const TrainingView view(test);
  const std::vector<ModelParams> models(3, filled(0.3));
  auto state = InfluenceState::start({10.0, 10.0, 10.0});
  state.advance();
  const InfluenceConfig config;
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(influence(i, models, models[0], view, state, 0.1, config), kGammaFloor);
  }
  const auto eps = contributions(state.gamma);
  for (double e : eps.epsilon) EXPECT_NEAR(e, 1.0 / 3.0, 1e-15);
}

TEST(Influence, FirstRoundHasNoHistory) {
  const Dataset test = small_test_set();
  const TrainingView view(test);
  Rng rng(2);
  std::vector<ModelParams> models{random_model(rng), random_model(rng), random_model(rng)};
  auto state = InfluenceState::start({1.0, 1.0, 1.0});
  state.advance();
  const std::vector<double> w{1.0 / 3, 1.0 / 3, 1.0 / 3};
  const auto agg = weighted_sum(models, w);
  InfluenceConfig config;
  for (std::size_t i = 0; i < 3; ++i) {
    const double s = std::abs(loss(leave_one_out_aggregate(models, state.effective_sizes, i), view, config.l2_lambda) -
                              loss(agg, view, config.l2_lambda));
    EXPECT_DOUBLE_EQ(influence(i, models, agg, view, state, 0.1, config), std::max(s, kGammaFloor));
  }
}

TEST(Influence, DecayedHistory) {
  const Dataset test = small_test_set();
  const TrainingView view(test);
  Rng rng(3);
  std::vector<ModelParams> models{random_model(rng), random_model(rng)};
  auto state = InfluenceState::start({1.0, 2.0});
  state.gamma = {0.5, 0.25};
  state.advance();
  InfluenceConfig config;
  config.l2_lambda = 0.1;
  config.local_epochs = 3;
  config.measure = InfluenceMeasure::kParamNorm;
  const auto agg = weighted_sum(models, std::vector<double>{0.5, 0.5});
  const double q = std::pow(1.0 - 0.2 * 0.1, 3);
  EXPECT_DOUBLE_EQ(influence_decay(0.2, 0.1, 3), q);
  const double s = (leave_one_out_aggregate(models, state.effective_sizes, 0).weights - agg.weights).norm();
  EXPECT_DOUBLE_EQ(influence(0, models, agg, view, state, 0.2, config), q * 0.5 + s);
  EXPECT_DOUBLE_EQ(state.decay[0], q);
  EXPECT_EQ(influence_decay(50.0, 0.1, 1), 0.0);
}

TEST(Contributions, Examples) {
  auto eps = contributions(std::vector<double>{1.0, 1.0, 1.0}).epsilon;
  for (double e : eps) EXPECT_DOUBLE_EQ(e, 1.0 / 3.0);
  eps = contributions(std::vector<double>{1.0, 2.0}).epsilon;
  EXPECT_DOUBLE_EQ(eps[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(eps[1], 1.0 / 3.0);
}

TEST(Contributions, Properties) {
  Rng rng(42);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.below(10);
    std::vector<double> g;
    for (std::size_t i = 0; i < n; ++i) g.push_back(kGammaFloor + std::pow(10.0, rng.uniform(-6.0, 3.0)));
    const auto eps = contributions(g).epsilon;
    EXPECT_NEAR(std::accumulate(eps.begin(), eps.end(), 0.0), 1.0, 1e-12);
    for (std::size_t a = 0; a < n; ++a) {
      EXPECT_GE(eps[a], 0.0);
      for (std::size_t b = 0; b < n; ++b) {
        if (g[a] < g[b]) {
          EXPECT_GT(eps[a], eps[b]);
        }
      }
    }
    const double c = std::pow(10.0, rng.uniform(-3.0, 3.0));
    std::vector<double> scaled;
    for (double v : g) scaled.push_back(c * v);
    const auto eps2 = contributions(scaled).epsilon;
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(eps[i], eps2[i], 1e-12);
  }
}

TEST(SizeWeights, Proportional) {
  const auto eps = size_weights(std::vector<std::size_t>{10, 30}).epsilon;
  EXPECT_DOUBLE_EQ(eps[0], 0.25);
  EXPECT_DOUBLE_EQ(eps[1], 0.75);
}

}  // namespace
}  // namespace fednl
