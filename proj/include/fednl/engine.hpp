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
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "fednl/contribution.hpp"
#include "fednl/dataset.hpp"
#include "fednl/error.hpp"
#include "fednl/metrics.hpp"
#include "fednl/noise_estimator.hpp"
#include "fednl/random.hpp"
#include "fednl/server_exchange.hpp"
#include "fednl/trainer.hpp"

namespace fednl {

enum class Weighting { kFedNL, kFedAvgSize };

struct FederationConfig {
  std::size_t rounds = 10;
  TrainerConfig trainer;
  /// Trainer used inside noise estimation; defaults to `trainer`.
  std::optional<TrainerConfig> estimator_trainer;
  bool run_procedure1 = true;
  bool run_procedure2 = true;
  Weighting weighting = Weighting::kFedNL;
  /// Compute contributions once after round 1 and keep them.
  bool freeze_epsilon = false;
  EffectiveSize effective_size = EffectiveSize::kNoiseFree;
  InfluenceMeasure influence = InfluenceMeasure::kLossChange;
  DemandCap demand_cap = DemandCap::kOneMinusZ;
  bool per_class_resplit = false;
  double gamma_min = kGammaFloor;
  double init_range = 0.01;
  /// Share of the server dataset held out as its test split.
  double server_test_fraction = 0.2;
  std::uint64_t seed = 0;
};

inline void validate(const FederationConfig& config) {
  require(config.rounds >= 1, ErrorKind::kConfig, "rounds must be >= 1");
  require(!config.run_procedure2 || config.run_procedure1, ErrorKind::kConfig,
          "noise normalization requires noise estimation");
  require(config.server_test_fraction > 0.0 && config.server_test_fraction < 1.0, ErrorKind::kConfig,
          "server_test_fraction must lie in (0, 1)");
  require(config.gamma_min > 0.0, ErrorKind::kConfig, "gamma_min must be positive");
  validate(config.trainer);
  if (config.estimator_trainer) validate(*config.estimator_trainer);
}

struct RoundRecord {
  std::size_t round = 0;
  /// Cumulative SGD steps after this round (maximum over participants).
  std::uint64_t steps = 0;
  std::vector<double> local_loss;
  /// sum_i eps_i L_i^t
  double global_loss = 0.0;
  /// sum_i eps_i L_i(w^t): the weighted objective at the aggregate.
  double aggregate_loss = 0.0;
  double server_test_loss = 0.0;
  std::vector<double> epsilon;
  std::vector<double> gamma;
  double global_accuracy = 0.0;
  double global_macro_f1 = 0.0;
  std::vector<double> local_accuracy;
  std::vector<double> local_macro_f1;
  std::string model_digest;
};

struct ParticipantSummary {
  std::string name;
  std::size_t original_size = 0;
  std::size_t training_size = 0;
  std::optional<NoiseEstimate> estimate;
  std::optional<ExchangeResult> exchange;
  /// Noise ratio fed into the effective size.
  double beta = 0.0;
  double effective_size = 0.0;
};

struct RunReport {
  std::string algorithm;
  std::vector<RoundRecord> records;
  std::vector<ModelParams> round_models;
  ModelParams initial_model;
  ModelParams final_model;
  std::vector<ModelParams> participant_models;
  std::vector<ParticipantSummary> participants;
  std::optional<Evaluation> final_global;
  std::vector<std::optional<Evaluation>> final_local;
  Dataset server_test;
  std::vector<Dataset> training_sets;
};

/// Entrywise weighted sum of participant models.
inline ModelParams aggregate(std::span<const ModelParams> models, const ContributionWeights& weights) {
  require(models.size() == weights.epsilon.size(), ErrorKind::kAggregation, "one weight per model required");
  for (double e : weights.epsilon) require(e >= 0.0 && std::isfinite(e), ErrorKind::kAggregation, "invalid weight");
  return weighted_sum(models, weights.epsilon);
}

inline std::string model_digest(const ModelParams& model) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_tag(model_to_string(model))));
  return buf;
}

namespace detail {

/// Stable per-participant seed key: the dataset name when names are unique,
/// otherwise the position.
inline std::vector<std::uint64_t> participant_keys(std::span<const Dataset> participants) {
  std::unordered_set<std::string> names;
  for (const auto& p : participants) names.insert(p.name);
  std::vector<std::uint64_t> keys;
  for (std::size_t i = 0; i < participants.size(); ++i) {
    keys.push_back(names.size() == participants.size() ? hash_tag(participants[i].name) : i);
  }
  return keys;
}

inline std::uint64_t local_seed(std::uint64_t master, std::uint64_t key, std::size_t round) {
  return derive_seed(derive_seed(master, "local", key), "round", round);
}

struct Evaluators {
  Dataset server_test;
  Dataset server_pool;
  TrainingView server_test_view;
};

inline Evaluators split_server(const FederationConfig& config, const Dataset& server) {
  Evaluators ev;
  if (server.empty()) return ev;
  auto [test, pool] = split_holdout(server, config.server_test_fraction, derive_seed(config.seed, "server_split"));
  ev.server_test = std::move(test);
  ev.server_pool = std::move(pool);
  ev.server_test_view = TrainingView(ev.server_test);
  return ev;
}

/// Fills the evaluation fields of a record for the round's aggregate.
inline void measure_round(RoundRecord& rec, const ModelParams& aggregated, std::span<const TrainingView> views,
                          const Evaluators& ev, std::span<const Dataset> local_tests, double l2) {
  rec.aggregate_loss = 0.0;
  for (std::size_t i = 0; i < views.size(); ++i) rec.aggregate_loss += rec.epsilon[i] * loss(aggregated, views[i], l2);
  if (!ev.server_test.empty()) {
    rec.server_test_loss = loss(aggregated, ev.server_test_view, l2);
    const auto eval = evaluate(aggregated, ev.server_test, LabelSource::kTrue);
    rec.global_accuracy = eval.metrics.accuracy;
    rec.global_macro_f1 = eval.metrics.macro_f1;
  }
  for (const auto& test : local_tests) {
    if (test.empty()) {
      rec.local_accuracy.push_back(0.0);
      rec.local_macro_f1.push_back(0.0);
      continue;
    }
    const auto eval = evaluate(aggregated, test, LabelSource::kTrue, MetricScope::kLocal);
    rec.local_accuracy.push_back(eval.metrics.accuracy);
    rec.local_macro_f1.push_back(eval.metrics.macro_f1);
  }
  rec.model_digest = model_digest(aggregated);
}

inline void finish_report(RunReport& report, const Evaluators& ev, std::span<const Dataset> local_tests) {
  if (!ev.server_test.empty()) report.final_global = evaluate(report.final_model, ev.server_test, LabelSource::kTrue);
  for (const auto& test : local_tests) {
    if (test.empty()) {
      report.final_local.emplace_back();
    } else {
      report.final_local.push_back(evaluate(report.final_model, test, LabelSource::kTrue, MetricScope::kLocal));
    }
  }
  report.server_test = ev.server_test;
}

inline void check_inputs(std::span<const Dataset> participants, const Dataset& server) {
  require(!participants.empty(), ErrorKind::kConfig, "no participants");
  for (const auto& p : participants) {
    validate(p);
    require(p.dim == participants[0].dim && p.class_count == participants[0].class_count, ErrorKind::kSchema,
            "participant " + p.name + " does not share the feature or class space of " + participants[0].name);
  }
  if (!server.empty()) {
    validate(server);
    require(server.dim == participants[0].dim && server.class_count == participants[0].class_count,
            ErrorKind::kSchema, "server data does not share the participants' feature or class space");
  }
}

}  // namespace detail

/// Size-weighted federated averaging with full participation.
inline RunReport run_fedavg(const FederationConfig& config, std::span<const Dataset> participants,
                            const Dataset& server = {}, std::span<const Dataset> local_tests = {}) {
  validate(config);
  detail::check_inputs(participants, server);
  const auto ev = detail::split_server(config, server);
  const auto keys = detail::participant_keys(participants);
  const std::size_t n = participants.size();

  std::vector<TrainingView> views;
  std::vector<std::size_t> sizes;
  for (const auto& p : participants) {
    views.emplace_back(p);
    sizes.push_back(views.back().size());
  }
  const ContributionWeights weights = size_weights(sizes);

  RunReport report;
  report.algorithm = "fedavg";
  report.training_sets.assign(participants.begin(), participants.end());
  for (std::size_t i = 0; i < n; ++i) {
    ParticipantSummary s;
    s.name = participants[i].name;
    s.original_size = s.training_size = participants[i].size();
    s.effective_size = static_cast<double>(sizes[i]);
    report.participants.push_back(std::move(s));
  }
  const int dim = participants[0].dim;
  const int classes = participants[0].class_count;
  ModelParams global = ModelParams::random_uniform(dim, classes, config.init_range, derive_seed(config.seed, "server_init"));
  report.initial_model = global;
  std::vector<std::uint64_t> steps(n, 0);
  std::vector<ModelParams> locals(n);

  for (std::size_t t = 1; t <= config.rounds; ++t) {
    RoundRecord rec;
    rec.round = t;
    rec.epsilon = weights.epsilon;
    for (std::size_t i = 0; i < n; ++i) {
      TrainerConfig tc = config.trainer;
      tc.seed = detail::local_seed(config.seed, keys[i], t);
      auto result = train_local(global, views[i], tc, steps[i]);
      steps[i] += result.steps;
      rec.local_loss.push_back(result.final_loss);
      locals[i] = std::move(result.model);
    }
    global = aggregate(locals, weights);
    for (std::size_t i = 0; i < n; ++i) rec.global_loss += weights.epsilon[i] * rec.local_loss[i];
    rec.steps = *std::max_element(steps.begin(), steps.end());
    detail::measure_round(rec, global, views, ev, local_tests, config.trainer.l2_lambda);
    report.records.push_back(std::move(rec));
    report.round_models.push_back(global);
  }
  report.final_model = global;
  report.participant_models = locals;
  detail::finish_report(report, ev, local_tests);
  return report;
}

/// Noise estimation and normalization once, then rounds of local training and
/// contribution-weighted aggregation.
inline RunReport run_fednl(const FederationConfig& config, std::span<const Dataset> participants, const Dataset& server,
                           std::span<const Dataset> local_tests = {}) {
  validate(config);
  detail::check_inputs(participants, server);
  require(!config.run_procedure2 || !server.empty(), ErrorKind::kConfig, "noise normalization needs a server dataset");
  const auto ev = detail::split_server(config, server);
  const auto keys = detail::participant_keys(participants);
  const std::size_t n = participants.size();
  const TrainerConfig estimator_trainer = config.estimator_trainer.value_or(config.trainer);
  const EstimatorOptions estimator_options{config.per_class_resplit};

  RunReport report;
  report.algorithm = config.weighting == Weighting::kFedNL ? "fednl" : "fednl-sizeweighted";
  const int dim = participants[0].dim;
  const int classes = participants[0].class_count;
  // Server builds the initial model and broadcasts it.
  ModelParams global = ModelParams::random_uniform(dim, classes, config.init_range, derive_seed(config.seed, "server_init"));
  report.initial_model = global;

  std::vector<Dataset> training;
  for (std::size_t i = 0; i < n; ++i) {
    ParticipantSummary s;
    s.name = participants[i].name;
    s.original_size = participants[i].size();
    Dataset data = participants[i];
    if (config.run_procedure1) {
      s.estimate = estimate_noise(participants[i], estimator_trainer, derive_seed(config.seed, "procedure1", keys[i]),
                                  estimator_options);
      s.beta = s.estimate->beta;
      if (config.run_procedure2) {
        DemandPlan plan = compute_demands(*s.estimate, participants[i].class_sizes(), config.demand_cap);
        plan = fulfill_demands(std::move(plan), ev.server_pool.class_sizes());
        s.exchange = apply_exchange(participants[i], *s.estimate, ev.server_pool, plan,
                                    derive_seed(config.seed, "procedure2", keys[i]), estimator_trainer, estimator_options);
        data = s.exchange->dataset;
        s.beta = s.exchange->beta;
      } else {
        data = select_ids(participants[i], s.estimate->noise_free_ids());
      }
    }
    s.training_size = data.size();
    s.effective_size = effective_size(s.training_size, s.beta, config.effective_size);
    training.push_back(std::move(data));
    report.participants.push_back(std::move(s));
  }

  std::vector<TrainingView> views;
  std::vector<std::size_t> sizes;
  std::vector<double> effective;
  for (std::size_t i = 0; i < n; ++i) {
    views.emplace_back(training[i]);
    require(!views.back().empty(), ErrorKind::kConfig,
            "participant " + report.participants[i].name + " has no training data left");
    sizes.push_back(views.back().size());
    effective.push_back(report.participants[i].effective_size);
  }
  report.training_sets = training;

  const bool fednl = config.weighting == Weighting::kFedNL;
  ContributionWeights weights;
  InfluenceState state = InfluenceState::start(effective);
  if (fednl) {
    // No history yet: every gamma sits at the floor, so round 1 is uniform.
    weights = contributions(std::vector<double>(n, config.gamma_min));
  } else {
    weights = size_weights(sizes);
  }
  const InfluenceConfig influence_config{config.influence, config.trainer.l2_lambda, config.trainer.local_epochs,
                                         config.gamma_min};

  std::vector<std::uint64_t> steps(n, 0);
  std::vector<ModelParams> locals(n);
  for (std::size_t t = 1; t <= config.rounds; ++t) {
    RoundRecord rec;
    rec.round = t;
    rec.epsilon = weights.epsilon;
    std::vector<double> round_eta(n);
    for (std::size_t i = 0; i < n; ++i) {
      TrainerConfig tc = config.trainer;
      tc.seed = detail::local_seed(config.seed, keys[i], t);
      round_eta[i] = lr_at(tc.lr_schedule, steps[i] + 1);
      // Every participant starts the round from the broadcast aggregate.
      auto result = train_local(global, views[i], tc, steps[i]);
      steps[i] += result.steps;
      rec.local_loss.push_back(result.final_loss);
      locals[i] = std::move(result.model);
    }
    global = aggregate(locals, weights);
    for (std::size_t i = 0; i < n; ++i) rec.global_loss += weights.epsilon[i] * rec.local_loss[i];
    rec.steps = *std::max_element(steps.begin(), steps.end());

    if (fednl && n >= 2) {
      state.advance();
      for (std::size_t i = 0; i < n; ++i) {
        influence(i, locals, global, ev.server_test_view.empty() ? views[i] : ev.server_test_view, state, round_eta[i],
                  influence_config);
      }
      rec.gamma = state.gamma;
      if (!config.freeze_epsilon || t == 1) weights = contributions(state.gamma);
    }
    detail::measure_round(rec, global, views, ev, local_tests, config.trainer.l2_lambda);
    report.records.push_back(std::move(rec));
    report.round_models.push_back(global);
  }
  report.final_model = global;
  report.participant_models = locals;
  detail::finish_report(report, ev, local_tests);
  return report;
}

inline nlohmann::json to_json(const RoundRecord& r) {
  return {{"round", r.round},
          {"steps", r.steps},
          {"local_loss", r.local_loss},
          {"global_loss", r.global_loss},
          {"aggregate_loss", r.aggregate_loss},
          {"server_test_loss", r.server_test_loss},
          {"epsilon", r.epsilon},
          {"gamma", r.gamma},
          {"global_accuracy", r.global_accuracy},
          {"global_macro_f1", r.global_macro_f1},
          {"local_accuracy", r.local_accuracy},
          {"local_macro_f1", r.local_macro_f1},
          {"model_digest", r.model_digest}};
}

inline RoundRecord round_record_from_json(const nlohmann::json& j) {
  RoundRecord r;
  r.round = j.at("round").get<std::size_t>();
  r.steps = j.at("steps").get<std::uint64_t>();
  r.local_loss = j.at("local_loss").get<std::vector<double>>();
  r.global_loss = j.at("global_loss").get<double>();
  r.aggregate_loss = j.at("aggregate_loss").get<double>();
  r.server_test_loss = j.at("server_test_loss").get<double>();
  r.epsilon = j.at("epsilon").get<std::vector<double>>();
  r.gamma = j.at("gamma").get<std::vector<double>>();
  r.global_accuracy = j.at("global_accuracy").get<double>();
  r.global_macro_f1 = j.at("global_macro_f1").get<double>();
  r.local_accuracy = j.at("local_accuracy").get<std::vector<double>>();
  r.local_macro_f1 = j.at("local_macro_f1").get<std::vector<double>>();
  r.model_digest = j.at("model_digest").get<std::string>();
  return r;
}

}  // namespace fednl
