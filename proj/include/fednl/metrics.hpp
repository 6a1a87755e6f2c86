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

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fednl/dataset.hpp"
#include "fednl/error.hpp"
#include "fednl/trainer.hpp"

namespace fednl {

/// Rows are the reference class, columns the predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0) : classes_(classes), counts_(static_cast<std::size_t>(classes * classes), 0) {}

  void add(ClassId actual, ClassId predicted) { ++counts_[static_cast<std::size_t>(actual * classes_ + predicted)]; }

  int classes() const { return classes_; }
  std::size_t operator()(int actual, int predicted) const {
    return counts_[static_cast<std::size_t>(actual * classes_ + predicted)];
  }

  std::size_t total() const {
    std::size_t sum = 0;
    for (auto v : counts_) sum += v;
    return sum;
  }
  std::size_t trace() const {
    std::size_t sum = 0;
    for (int k = 0; k < classes_; ++k) sum += (*this)(k, k);
    return sum;
  }
  std::size_t support(int k) const {
    std::size_t sum = 0;
    for (int l = 0; l < classes_; ++l) sum += (*this)(k, l);
    return sum;
  }
  std::size_t predicted(int k) const {
    std::size_t sum = 0;
    for (int l = 0; l < classes_; ++l) sum += (*this)(l, k);
    return sum;
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (int k = 0; k < classes_; ++k) {
      std::vector<std::size_t> row;
      for (int l = 0; l < classes_; ++l) row.push_back((*this)(k, l));
      rows.push_back(row);
    }
    return rows;
  }

 private:
  int classes_;
  std::vector<std::size_t> counts_;
};

enum class LabelSource { kTrue, kObserved };
enum class MetricScope { kLocal, kGlobal };

struct MetricsSnapshot {
  MetricScope scope = MetricScope::kGlobal;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  /// Per-class F1 weighted by reference support.
  double weighted_f1 = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  /// Classes absent from the reference labels; their F1 is reported as 0.
  std::vector<bool> zero_support;
};

struct Evaluation {
  MetricsSnapshot metrics;
  ConfusionMatrix confusion;
};

inline MetricsSnapshot summarize(const ConfusionMatrix& cm, MetricScope scope = MetricScope::kGlobal) {
  MetricsSnapshot s;
  s.scope = scope;
  const int c = cm.classes();
  const std::size_t total = cm.total();
  s.accuracy = total == 0 ? 0.0 : static_cast<double>(cm.trace()) / static_cast<double>(total);
  // Single-label classification: micro precision = micro recall = accuracy.
  s.micro_f1 = s.accuracy;
  double f1_sum = 0.0;
  for (int k = 0; k < c; ++k) {
    const auto tp = static_cast<double>(cm(k, k));
    const auto support = static_cast<double>(cm.support(k));
    const auto predicted = static_cast<double>(cm.predicted(k));
    const double precision = predicted > 0 ? tp / predicted : 0.0;
    const double recall = support > 0 ? tp / support : 0.0;
    const double f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    s.precision.push_back(precision);
    s.recall.push_back(recall);
    s.f1.push_back(f1);
    s.zero_support.push_back(support == 0);
    f1_sum += f1;
    s.weighted_f1 += total == 0 ? 0.0 : f1 * support / static_cast<double>(total);
  }
  s.macro_f1 = c > 0 ? f1_sum / c : 0.0;
  return s;
}

inline Evaluation evaluate_predictions(std::span<const ClassId> actual, std::span<const ClassId> predicted, int classes,
                                       MetricScope scope = MetricScope::kGlobal) {
  require(actual.size() == predicted.size(), ErrorKind::kMetric, "label and prediction counts differ");
  ConfusionMatrix cm(classes);
  for (std::size_t j = 0; j < actual.size(); ++j) {
    require(actual[j] >= 0 && actual[j] < classes && predicted[j] >= 0 && predicted[j] < classes, ErrorKind::kMetric,
            "label outside class space at instance " + std::to_string(j));
    cm.add(actual[j], predicted[j]);
  }
  return {summarize(cm, scope), cm};
}

/// Scores a model against either the retained true labels or the observed
/// labels. Out-of-space observed labels are skipped.
inline Evaluation evaluate(const ModelParams& model, const Dataset& data, LabelSource source = LabelSource::kTrue,
                           MetricScope scope = MetricScope::kGlobal) {
  require(!data.empty(), ErrorKind::kMetric, "cannot evaluate on an empty dataset");
  std::vector<ClassId> actual;
  std::vector<ClassId> predicted;
  for (const auto& inst : data.instances) {
    ClassId reference = inst.observed_label;
    if (source == LabelSource::kTrue) {
      require(inst.true_label.has_value(), ErrorKind::kMetric, "instance " + std::to_string(inst.id) + " has no true label");
      reference = *inst.true_label;
    } else if (reference == kOutOfSpace) {
      continue;
    }
    actual.push_back(reference);
    predicted.push_back(predict(model, inst));
  }
  return evaluate_predictions(actual, predicted, data.class_count, scope);
}

/// Contribution at some noise level relative to the noise-free contribution.
inline double contribution_ratio(double eps_noisy, double eps_clean) {
  require(eps_clean > 0.0, ErrorKind::kRatio, "noise-free contribution must be positive");
  return eps_noisy / eps_clean;
}

inline nlohmann::json to_json(const MetricsSnapshot& s) {
  return {{"scope", s.scope == MetricScope::kLocal ? "local" : "global"},
          {"accuracy", s.accuracy},
          {"macro_f1", s.macro_f1},
          {"weighted_f1", s.weighted_f1},
          {"micro_f1", s.micro_f1},
          {"precision", s.precision},
          {"recall", s.recall},
          {"f1", s.f1},
          {"zero_support", s.zero_support}};
}

}  // namespace fednl
