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
#include "fednl/noise_model.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace fednl {
namespace {

Dataset uniform_labels(int classes, int n, std::uint64_t seed) {
  Dataset ds;
  ds.class_count = classes;
  ds.dim = 1;
  Rng rng(seed);
  for (int j = 0; j < n; ++j) {
    ds.instances.push_back({static_cast<InstanceId>(j), {static_cast<double>(j)},
                            static_cast<ClassId>(rng.below(classes)), std::nullopt});
  }
  return ds;
}

TEST(SymmetricMatrix, EntriesAndRowSums) {
  const auto p = symmetric_matrix(6, 0.2);
  for (int k = 0; k < 6; ++k) {
    EXPECT_DOUBLE_EQ(p(k, k), 0.8);
    for (int l = 0; l < 6; ++l) {
      if (l != k) {
        EXPECT_DOUBLE_EQ(p(k, l), 0.04);
      }
    }
    EXPECT_NEAR(p.rows().row(k).sum(), 1.0, 1e-12);
  }
  EXPECT_TRUE(symmetric_matrix(3, 0.0).rows().isIdentity());
  try {
    symmetric_matrix(3, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDomain);
  }
}

TEST(AsymmetricMatrix, ByConstruction) {
  const auto p = asymmetric_matrix(2, {{0, 1, 0.3}});
  EXPECT_DOUBLE_EQ(p(0, 0), 0.7);
  EXPECT_DOUBLE_EQ(p(0, 1), 0.3);
  EXPECT_DOUBLE_EQ(p(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(p(1, 1), 1.0);
  EXPECT_TRUE(p.diagonally_dominant());
  EXPECT_TRUE(asymmetric_matrix(4, {}).rows().isIdentity());
}

TEST(AsymmetricMatrix, Errors) {
  try {
    asymmetric_matrix(3, {{0, 1, 0.6}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDominance);
  }
  try {
    asymmetric_matrix(3, {{0, 1, 0.2}, {0, 1, 0.1}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNoiseMatrix);
  }
  EXPECT_THROW(asymmetric_matrix(3, {{0, 2, 0.3}, {0, 1, 0.25}}), Error);
  EXPECT_THROW(asymmetric_matrix(3, {{1, 1, 0.1}}), Error);
  EXPECT_THROW(asymmetric_matrix(3, {{0, 3, 0.1}}), Error);
}

TEST(AsymmetricMatrix, RandomPairsStayStochasticAndDominant) {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = 2 + static_cast<int>(rng.below(6));
    std::vector<NoisePair> pairs;
    for (int src = 0; src < c; ++src) {
      const int dst = (src + 1 + static_cast<int>(rng.below(c - 1))) % c;
      pairs.push_back({src, dst, rng.uniform(0.0, 0.49)});
    }
    const auto p = asymmetric_matrix(c, pairs);
    EXPECT_TRUE(p.diagonally_dominant());
    for (int k = 0; k < c; ++k) EXPECT_NEAR(p.rows().row(k).sum(), 1.0, 1e-12);
  }
}

TEST(InjectNoise, IdentityIsNoOp) {
  const Dataset ds = uniform_labels(3, 200, 1);
  const auto [noisy, report] = inject_noise(ds, TransitionMatrix::identity(3), 5);
  for (std::size_t j = 0; j < ds.size(); ++j) {
    EXPECT_EQ(noisy.instances[j].observed_label, ds.instances[j].observed_label);
    EXPECT_EQ(noisy.instances[j].true_label, ds.instances[j].observed_label);
    EXPECT_EQ(noisy.instances[j].features, ds.instances[j].features);
  }
  for (auto count : report.injected_count) EXPECT_EQ(count, 0u);
  EXPECT_EQ(report.total_flipped(), 0u);
}

TEST(InjectNoise, SymmetricFlipFrequency) {
  const Dataset ds = uniform_labels(4, 10000, 2);
  const auto [noisy, report] = inject_noise(ds, symmetric_matrix(4, 0.3), 7);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(report.realized_ratio[k], 0.3, 0.02) << "class " << k;
  // Report bookkeeping agrees with the labels themselves.
  std::size_t changed = 0;
  for (const auto& inst : noisy.instances) changed += inst.observed_label != *inst.true_label;
  EXPECT_EQ(changed, report.total_flipped());
}

TEST(InjectNoise, AsymmetricSupport) {
  const Dataset ds = uniform_labels(3, 3000, 3);
  const auto [noisy, report] = inject_noise(ds, asymmetric_matrix(3, {{0, 1, 0.3}}), 8);
  for (const auto& inst : noisy.instances) {
    if (inst.observed_label != *inst.true_label) {
      EXPECT_EQ(*inst.true_label, 0);
      EXPECT_EQ(inst.observed_label, 1);
    }
  }
  EXPECT_GT(report.injected_count[0], 0u);
  EXPECT_EQ(report.injected_count[1], 0u);
  EXPECT_EQ(report.injected_count[2], 0u);
}

TEST(InjectNoise, DeterministicUnderSeed) {
  const Dataset ds = uniform_labels(5, 500, 4);
  const auto p = symmetric_matrix(5, 0.4);
  const auto a = inject_noise(ds, p, 99).first;
  const auto b = inject_noise(ds, p, 99).first;
  const auto c = inject_noise(ds, p, 100).first;
  bool differs = false;
  for (std::size_t j = 0; j < ds.size(); ++j) {
    EXPECT_EQ(a.instances[j].observed_label, b.instances[j].observed_label);
    differs |= a.instances[j].observed_label != c.instances[j].observed_label;
  }
  EXPECT_TRUE(differs);
}

TEST(InjectNoise, OutOfSpaceColumn) {
  const Dataset ds = uniform_labels(3, 6000, 5);
  const auto p = with_out_of_space(symmetric_matrix(3, 0.2), 0.1);
  EXPECT_NEAR(p(0, 0), 0.7, 1e-15);
  const auto [noisy, report] = inject_noise(ds, p, 1);
  std::size_t oos = 0;
  for (const auto& inst : noisy.instances) oos += inst.observed_label == kOutOfSpace;
  EXPECT_NEAR(static_cast<double>(oos) / ds.size(), 0.1, 0.02);
  EXPECT_NO_THROW(validate(noisy));
}

TEST(InjectNoise, RejectsMismatchedClasses) {
  EXPECT_THROW(inject_noise(uniform_labels(3, 10, 1), symmetric_matrix(4, 0.1), 1), Error);
}

TEST(TransitionMatrixFile, RoundTrip) {
  const auto p = with_out_of_space(asymmetric_matrix(3, {{0, 1, 0.1}, {2, 0, 0.3}}), 0.05);
  std::stringstream buf;
  write_transition_matrix(buf, p);
  const auto back = read_transition_matrix(buf);
  EXPECT_EQ(back.classes(), 3);
  EXPECT_TRUE(back.has_out_of_space());
  EXPECT_EQ(back.rows(), p.rows());
  std::istringstream bad("fednl-transition-matrix 1\nclasses 2\nout_of_space 0\n0.5 0.5\n0.5\n");
  EXPECT_THROW(read_transition_matrix(bad), Error);
}

}  // namespace
}  // namespace fednl
