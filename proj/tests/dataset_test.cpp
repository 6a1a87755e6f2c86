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
#include "fednl/dataset.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_set>

#include "fednl/trainer.hpp"

namespace fednl {
namespace {

std::multiset<InstanceId> id_multiset(const std::vector<Dataset>& parts) {
  std::multiset<InstanceId> ids;
  for (const auto& part : parts) {
    for (const auto& inst : part.instances) ids.insert(inst.id);
  }
  return ids;
}

TEST(LoadDataset, ReadsRowsAndInfersClassCount) {
  std::istringstream in("f0,f1,label\n1.0,2.0,0\n3.5,-1,2\n0,0,1\n");
  const Dataset ds = read_dataset(in);
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.dim, 2);
  EXPECT_EQ(ds.class_count, 3);
  EXPECT_DOUBLE_EQ(ds.instances[1].features[0], 3.5);
  EXPECT_EQ(ds.instances[1].observed_label, 2);
  EXPECT_FALSE(ds.instances[0].true_label.has_value());
}

TEST(LoadDataset, EmptyFileWithHeader) {
  std::istringstream in("f0,f1,label,true_label\n");
  DatasetSchema schema;
  schema.class_count = 3;
  const Dataset ds = read_dataset(in, schema);
  EXPECT_EQ(ds.size(), 0u);
  EXPECT_EQ(ds.dim, 2);
}

TEST(LoadDataset, LabelOutsideDeclaredSpaceNamesRow) {
  std::istringstream in("f0,f1,label\n0.5,0.5,7\n");
  DatasetSchema schema;
  schema.class_count = 3;
  try {
    read_dataset(in, schema);
    FAIL() << "expected schema error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSchema);
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
  }
}

TEST(LoadDataset, MalformedRows) {
  {
    std::istringstream in("f0,label\n1,0\n1,2,0\n");
    try {
      read_dataset(in);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kParse);
      EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
    }
  }
  {
    std::istringstream in("f0,label\nabc,0\n");
    EXPECT_THROW(read_dataset(in), Error);
  }
}

TEST(LoadDataset, OutOfSpaceSentinelNeedsPermission) {
  std::istringstream denied("f0,label\n1,-1\n");
  EXPECT_THROW(read_dataset(denied), Error);
  std::istringstream allowed("f0,label\n1,-1\n2,0\n");
  DatasetSchema schema;
  schema.allow_out_of_space = true;
  schema.class_count = 2;
  const Dataset ds = read_dataset(allowed, schema);
  EXPECT_EQ(ds.instances[0].observed_label, kOutOfSpace);
}

TEST(LoadDataset, WriteThenReadPreservesEverything) {
  const Dataset ds = synth_gaussian(3, 4, 3, 5.0, 11);
  std::stringstream buf;
  write_dataset(buf, ds);
  const Dataset back = read_dataset(buf);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t j = 0; j < ds.size(); ++j) {
    EXPECT_EQ(back.instances[j].features, ds.instances[j].features);
    EXPECT_EQ(back.instances[j].observed_label, ds.instances[j].observed_label);
    EXPECT_EQ(back.instances[j].true_label, ds.instances[j].true_label);
  }
}

TEST(SynthGaussian, CountsAndDeterminism) {
  const Dataset a = synth_gaussian(2, 5, 2, 10.0, 1);
  EXPECT_EQ(a.size(), 10u);
  EXPECT_EQ(a.class_sizes(), (std::vector<std::size_t>{5, 5}));
  const Dataset b = synth_gaussian(2, 5, 2, 10.0, 1);
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a.instances[j].features, b.instances[j].features);
    EXPECT_EQ(a.instances[j].true_label, a.instances[j].observed_label);
  }
  EXPECT_THROW(synth_gaussian(1, 5, 2, 1.0, 1), Error);
  EXPECT_THROW(synth_gaussian(2, 0, 2, 1.0, 1), Error);
  EXPECT_THROW(synth_gaussian(2, 5, 2, 0.0, 1), Error);
}

TEST(SynthGaussian, ClassMeansRespectSeparation) {
  for (int c : {2, 3, 5, 8}) {
    const Dataset ds = synth_gaussian(c, 2000, 2, 6.0, 3);
    std::vector<std::array<double, 2>> means(c, {0.0, 0.0});
    for (const auto& inst : ds.instances) {
      means[inst.observed_label][0] += inst.features[0] / 2000.0;
      means[inst.observed_label][1] += inst.features[1] / 2000.0;
    }
    for (int a = 0; a < c; ++a) {
      for (int b = a + 1; b < c; ++b) {
        EXPECT_GT(std::hypot(means[a][0] - means[b][0], means[a][1] - means[b][1]), 6.0 - 0.25);
      }
    }
  }
}

TEST(SynthGaussian, SeparableEnoughForSoftmax) {
  // Oracle: the trainer itself must fit the blobs almost perfectly.
  const Dataset ds = synth_gaussian(3, 200, 2, 8.0, 7);
  TrainerConfig config;
  config.local_epochs = 20;
  config.batch_size = 32;
  config.lr_schedule = LrSchedule::constant(0.1);
  config.seed = 1;
  const auto trained = train_local(ModelParams::zeros(2, 3), ds, config);
  std::size_t correct = 0;
  for (const auto& inst : ds.instances) correct += predict(trained.model, inst) == inst.observed_label;
  EXPECT_GE(static_cast<double>(correct) / ds.size(), 0.98);
}

TEST(PartitionNonIid, ShuffleSplitSizes) {
  const Dataset hundred = synth_gaussian(4, 25, 2, 3.0, 1);
  const auto parts = partition_non_iid(hundred, 4, 9);
  for (const auto& part : parts) EXPECT_EQ(part.size(), 25u);

  const Dataset ten = synth_gaussian(2, 5, 2, 3.0, 1);
  const auto uneven = partition_non_iid(ten, 3, 9);
  EXPECT_EQ(uneven[0].size(), 4u);
  EXPECT_EQ(uneven[1].size(), 3u);
  EXPECT_EQ(uneven[2].size(), 3u);

  EXPECT_THROW(partition_non_iid(ten, 11, 9), Error);
  EXPECT_THROW(partition_non_iid(ten.like(), 1, 9), Error);
}

TEST(PartitionNonIid, LabelSkewConcentratesMajorClass) {
  const Dataset ds = synth_gaussian(2, 500, 2, 3.0, 5);
  for (std::size_t n_parts : {2u, 4u}) {
    const auto parts = partition_non_iid(ds, n_parts, 17, PartitionStrategy::label_skew(1, 0.8));
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const auto sizes = parts[p].class_sizes();
      const double major = static_cast<double>(sizes[p % 2]) / parts[p].size();
      EXPECT_GE(major, 0.78) << "participant " << p;
    }
  }
}

TEST(PartitionNonIid, DisjointCoverProperty) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int c = 2 + static_cast<int>(rng.below(4));
    const Dataset ds = synth_gaussian(c, 5 + static_cast<int>(rng.below(40)), 2, 3.0, seed);
    const std::size_t n_parts = 1 + rng.below(std::min<std::size_t>(ds.size(), 9));
    const auto strategy = seed % 2 ? PartitionStrategy::shuffle_split()
                                   : PartitionStrategy::label_skew(1 + static_cast<int>(rng.below(c)), rng.uniform01());
    const auto parts = partition_non_iid(ds, n_parts, seed, strategy);
    const auto ids = id_multiset(parts);
    const auto expected = ds.ids();
    EXPECT_EQ(ids, std::multiset<InstanceId>(expected.begin(), expected.end()));
    std::size_t lo = ds.size();
    std::size_t hi = 0;
    for (const auto& part : parts) {
      lo = std::min(lo, part.size());
      hi = std::max(hi, part.size());
    }
    EXPECT_LE(hi - lo, 1u);
    // Pure function of inputs and seed.
    const auto again = partition_non_iid(ds, n_parts, seed, strategy);
    for (std::size_t p = 0; p < parts.size(); ++p) EXPECT_EQ(parts[p].ids(), again[p].ids());
  }
}

TEST(SplitThreeFolds, SizesFollowRemainderPolicy) {
  const auto nine = split_three_folds(synth_gaussian(3, 3, 2, 3.0, 1), 4);
  for (const auto& fold : nine.folds) EXPECT_EQ(fold.size(), 3u);
  const auto ten = split_three_folds(synth_gaussian(2, 5, 2, 3.0, 1), 4);
  EXPECT_EQ(ten.folds[0].size(), 4u);
  EXPECT_EQ(ten.folds[1].size(), 3u);
  EXPECT_EQ(ten.folds[2].size(), 3u);
  try {
    split_three_folds(synth_gaussian(2, 1, 2, 3.0, 1), 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSplit);
  }
}

TEST(SplitThreeFolds, DisjointNearEqualProperty) {
  for (int n = 3; n < 60; ++n) {
    Dataset ds = synth_gaussian(2, 1, 1, 1.0, 0).like();
    for (int j = 0; j < n; ++j) ds.instances.push_back({static_cast<InstanceId>(j), {0.0}, j % 2, j % 2});
    const auto split = split_three_folds(ds, static_cast<std::uint64_t>(n));
    std::vector<Dataset> folds(split.folds.begin(), split.folds.end());
    const auto ids = id_multiset(folds);
    const auto expected = ds.ids();
    EXPECT_EQ(ids, std::multiset<InstanceId>(expected.begin(), expected.end()));
    const auto [lo, hi] = std::minmax({folds[0].size(), folds[1].size(), folds[2].size()});
    EXPECT_LE(hi - lo, 1u);
  }
}

TEST(ClassSubset, SelectsObservedLabel) {
  Dataset ds;
  ds.class_count = 3;
  ds.dim = 1;
  ds.instances = {{0, {0.0}, 0, {}}, {1, {1.0}, 1, {}}, {2, {2.0}, 0, {}}, {3, {3.0}, kOutOfSpace, {}}};
  const Dataset zeros = class_subset(ds, 0);
  ASSERT_EQ(zeros.size(), 2u);
  EXPECT_EQ(zeros.instances[0].id, 0u);
  EXPECT_EQ(zeros.instances[1].id, 2u);
  EXPECT_TRUE(class_subset(ds, 2).empty());

  std::vector<Dataset> pieces;
  for (int k = 0; k < 3; ++k) pieces.push_back(class_subset(ds, k));
  pieces.push_back(out_of_space_subset(ds));
  const auto ids = id_multiset(pieces);
  const auto expected = ds.ids();
  EXPECT_EQ(ids, std::multiset<InstanceId>(expected.begin(), expected.end()));
}

TEST(TrainingView, DropsOutOfSpaceAndAppendsBias) {
  Dataset ds;
  ds.class_count = 2;
  ds.dim = 2;
  ds.instances = {{4, {1.0, 2.0}, 1, 0}, {5, {3.0, 4.0}, kOutOfSpace, 1}};
  const TrainingView view(ds);
  ASSERT_EQ(view.size(), 1u);
  EXPECT_EQ(view.ids()[0], 4u);
  EXPECT_EQ(view.labels()[0], 1);
  EXPECT_DOUBLE_EQ(view.design()(0, 2), 1.0);
}

}  // namespace
}  // namespace fednl
