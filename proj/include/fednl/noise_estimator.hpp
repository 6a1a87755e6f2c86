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
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "fednl/dataset.hpp"
#include "fednl/error.hpp"
#include "fednl/random.hpp"
#include "fednl/trainer.hpp"

namespace fednl {

enum class Agreement { kNoiseFree, kNoisy };

/// An instance is kept only when both held-out predictions agree with its label.
inline Agreement classify_instance(ClassId existing, ClassId pred1, ClassId pred2) {
  return existing == pred1 && existing == pred2 ? Agreement::kNoiseFree : Agreement::kNoisy;
}

struct ClassNoise {
  std::vector<InstanceId> noise_free;  // sorted
  std::vector<InstanceId> removed;     // sorted
  std::size_t support = 0;
  double beta = 0.0;
  bool empty_class = false;
};

struct NoiseEstimate {
  std::vector<ClassNoise> classes;
  /// Out-of-space labels can never agree with a prediction.
  std::vector<InstanceId> out_of_space_removed;
  /// Minimum per-class ratio over non-empty classes and the class attaining it.
  double z = 0.0;
  ClassId b = 0;
  /// Mean of the per-class ratios over all c classes.
  double beta = 0.0;
  int trainings = 0;
  std::size_t predictions = 0;

  std::vector<double> betas() const {
    std::vector<double> out;
    for (const auto& cls : classes) out.push_back(cls.beta);
    return out;
  }

  std::vector<InstanceId> all_removed() const {
    std::vector<InstanceId> out = out_of_space_removed;
    for (const auto& cls : classes) out.insert(out.end(), cls.removed.begin(), cls.removed.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  std::unordered_set<InstanceId> noise_free_ids() const {
    std::unordered_set<InstanceId> out;
    for (const auto& cls : classes) out.insert(cls.noise_free.begin(), cls.noise_free.end());
    return out;
  }
};

struct EstimatorOptions {
  /// Re-split the dataset separately for every class (3c trainings instead of 3).
  bool per_class_resplit = false;
};

namespace detail {

/// Trains on fold j and predicts folds j+1, j+2 (mod 3); returns two
/// predictions per instance id.
inline void cross_predict(const FoldSplit& split, const TrainerConfig& config, std::uint64_t seed, int& trainings,
                          std::unordered_map<InstanceId, std::vector<ClassId>>& predictions) {
  for (int j = 0; j < 3; ++j) {
    const TrainingView train(split.folds[j]);
    require(!train.empty(), ErrorKind::kEstimation, "fold " + std::to_string(j) + " has no in-space labels");
    TrainerConfig fold_config = config;
    fold_config.seed = derive_seed(seed, "fold_train", static_cast<std::uint64_t>(j));
    // Fresh model for every fold.
    const auto trained = train_local(ModelParams::zeros(train.dim(), train.class_count()), train, fold_config);
    ++trainings;
    for (int offset = 1; offset <= 2; ++offset) {
      for (const auto& inst : split.folds[(j + offset) % 3].instances) {
        predictions[inst.id].push_back(predict(trained.model, inst));
      }
    }
  }
}

inline void finalize(NoiseEstimate& est) {
  const int c = static_cast<int>(est.classes.size());
  double sum = 0.0;
  est.z = std::numeric_limits<double>::infinity();
  est.b = 0;
  for (int k = 0; k < c; ++k) {
    auto& cls = est.classes[k];
    std::sort(cls.noise_free.begin(), cls.noise_free.end());
    std::sort(cls.removed.begin(), cls.removed.end());
    cls.support = cls.noise_free.size() + cls.removed.size();
    cls.empty_class = cls.support == 0;
    cls.beta = cls.empty_class ? 0.0 : static_cast<double>(cls.removed.size()) / static_cast<double>(cls.support);
    sum += cls.beta;
    if (!cls.empty_class && cls.beta < est.z) {
      est.z = cls.beta;
      est.b = k;
    }
  }
  if (!std::isfinite(est.z)) est.z = 0.0;
  std::sort(est.out_of_space_removed.begin(), est.out_of_space_removed.end());
  est.beta = c > 0 ? sum / c : 0.0;
}

}  // namespace detail

/// Three-fold cross-prediction noise estimate for one participant.
inline NoiseEstimate estimate_noise(const Dataset& ds, const TrainerConfig& config, std::uint64_t seed,
                                    const EstimatorOptions& options = {}) {
  require(ds.size() >= 3, ErrorKind::kEstimation,
          "noise estimation needs at least 3 instances, got " + std::to_string(ds.size()));
  validate(config);
  NoiseEstimate est;
  est.classes.resize(static_cast<std::size_t>(ds.class_count));

  auto assign = [&](const Instance& inst, const std::vector<ClassId>& preds) {
    auto& cls = est.classes[inst.observed_label];
    if (classify_instance(inst.observed_label, preds[0], preds[1]) == Agreement::kNoiseFree) {
      cls.noise_free.push_back(inst.id);
    } else {
      cls.removed.push_back(inst.id);
    }
  };

  for (const auto& inst : ds.instances) {
    if (inst.observed_label == kOutOfSpace) est.out_of_space_removed.push_back(inst.id);
  }

  if (!options.per_class_resplit) {
    std::unordered_map<InstanceId, std::vector<ClassId>> predictions;
    detail::cross_predict(split_three_folds(ds, derive_seed(seed, "estimate_split")), config, seed, est.trainings,
                          predictions);
    for (const auto& inst : ds.instances) {
      if (inst.observed_label == kOutOfSpace) continue;
      const auto& preds = predictions.at(inst.id);
      est.predictions += preds.size();
      assign(inst, preds);
    }
  } else {
    for (ClassId k = 0; k < ds.class_count; ++k) {
      std::unordered_map<InstanceId, std::vector<ClassId>> predictions;
      const std::uint64_t class_seed = derive_seed(seed, "estimate_class", static_cast<std::uint64_t>(k));
      detail::cross_predict(split_three_folds(ds, derive_seed(class_seed, "estimate_split")), config, class_seed,
                            est.trainings, predictions);
      for (const auto& inst : ds.instances) {
        if (inst.observed_label != k) continue;
        const auto& preds = predictions.at(inst.id);
        est.predictions += preds.size();
        assign(inst, preds);
      }
    }
  }
  detail::finalize(est);
  return est;
}

inline nlohmann::json to_json(const NoiseEstimate& est) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t k = 0; k < est.classes.size(); ++k) {
    const auto& cls = est.classes[k];
    classes.push_back({{"class", k},
                       {"beta", cls.beta},
                       {"noise_free", cls.noise_free.size()},
                       {"removed", cls.removed.size()},
                       {"empty", cls.empty_class}});
  }
  return {{"classes", classes},
          {"z", est.z},
          {"b", est.b},
          {"beta", est.beta},
          {"out_of_space_removed", est.out_of_space_removed.size()},
          {"trainings", est.trainings}};
}

}  // namespace fednl
