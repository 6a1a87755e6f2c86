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
#include "fednl/metrics.hpp"

#include <gtest/gtest.h>

namespace fednl {
namespace {

TEST(Evaluate, PerfectPredictor) {
  const std::vector<ClassId> y{0, 1, 2, 2, 1, 0};
  const auto e = evaluate_predictions(y, y, 3);
  EXPECT_EQ(e.metrics.accuracy, 1.0);
  EXPECT_EQ(e.metrics.macro_f1, 1.0);
  for (int k = 0; k < 3; ++k) {
    for (int l = 0; l < 3; ++l) {
      if (k != l) {
        EXPECT_EQ(e.confusion(k, l), 0u);
      }
    }
  }
}

TEST(Evaluate, ConstantPredictorBalancedBinary) {
  const std::vector<ClassId> y{0, 0, 1, 1};
  const std::vector<ClassId> p{0, 0, 0, 0};
  const auto e = evaluate_predictions(y, p, 2);
  EXPECT_DOUBLE_EQ(e.metrics.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(e.metrics.macro_f1, 1.0 / 3.0);
}

TEST(Evaluate, WeightedF1FollowsSupport) {
  const std::vector<ClassId> y{0, 0, 0, 1};
  const std::vector<ClassId> p{0, 0, 0, 0};
  const auto e = evaluate_predictions(y, p, 2);
  EXPECT_DOUBLE_EQ(e.metrics.f1[0], 6.0 / 7.0);
  EXPECT_DOUBLE_EQ(e.metrics.macro_f1, 3.0 / 7.0);
  EXPECT_DOUBLE_EQ(e.metrics.weighted_f1, 9.0 / 14.0);
}

TEST(Evaluate, ConfusionRowsAreSupports) {
  Rng rng(1);
  std::vector<ClassId> y;
  std::vector<ClassId> p;
  for (int j = 0; j < 500; ++j) {
    y.push_back(static_cast<ClassId>(rng.below(4)));
    p.push_back(static_cast<ClassId>(rng.below(4)));
  }
  const auto e = evaluate_predictions(y, p, 4);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(e.confusion.support(k), static_cast<std::size_t>(std::count(y.begin(), y.end(), k)));
  }
  EXPECT_EQ(e.confusion.total(), y.size());
  EXPECT_EQ(e.metrics.accuracy, static_cast<double>(e.confusion.trace()) / e.confusion.total());
  EXPECT_LE(e.metrics.macro_f1, 1.0);
  EXPECT_LT(e.metrics.macro_f1, 1.0);
}

TEST(Evaluate, ZeroSupportClassFlagged) {
  const std::vector<ClassId> y{0, 1, 0, 1};
  const auto e = evaluate_predictions(y, y, 3);
  EXPECT_TRUE(e.metrics.zero_support[2]);
  EXPECT_EQ(e.metrics.f1[2], 0.0);
  EXPECT_DOUBLE_EQ(e.metrics.macro_f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(e.metrics.weighted_f1, 1.0);
}

TEST(Evaluate, ModelAgainstTrueOrObservedLabels) {
  Dataset ds = synth_gaussian(2, 5, 1, 10.0, 1);
  ModelParams m = ModelParams::zeros(1, 2);
  m.weights(0, 1) = 1.0;  // predicts class 1 for positive features
  ds.instances[0].observed_label = 1;
  const auto truth = evaluate(m, ds, LabelSource::kTrue);
  const auto observed = evaluate(m, ds, LabelSource::kObserved);
  EXPECT_EQ(truth.metrics.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(observed.metrics.accuracy, 0.9);
  EXPECT_EQ(ds.instances[0].observed_label, 1);

  ds.instances[3].true_label.reset();
  try {
    evaluate(m, ds, LabelSource::kTrue);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMetric);
  }
}

TEST(ContributionRatio, Values) {
  EXPECT_EQ(contribution_ratio(0.3, 0.3), 1.0);
  EXPECT_DOUBLE_EQ(contribution_ratio(0.05, 0.10), 0.5);
  try {
    contribution_ratio(0.1, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kRatio);
  }
}

TEST(Snapshot, Json) {
  const std::vector<ClassId> y{0, 1};
  const auto j = to_json(evaluate_predictions(y, y, 2, MetricScope::kLocal).metrics);
  EXPECT_EQ(j.at("scope"), "local");
  EXPECT_EQ(j.at("accuracy").get<double>(), 1.0);
}

}  // namespace
}  // namespace fednl
