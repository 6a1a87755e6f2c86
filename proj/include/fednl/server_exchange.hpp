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
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "fednl/dataset.hpp"
#include "fednl/error.hpp"
#include "fednl/noise_estimator.hpp"
#include "fednl/random.hpp"
#include "fednl/trainer.hpp"

namespace fednl {

/// How the demanded fraction F_ik = beta_ik - z_i is capped.
enum class DemandCap {
  kOneMinusZ,  // F <= 1 - z (never binds since beta <= 1)
  kZ,          // F <= z
};

struct ClassDemand {
  double fraction = 0.0;
  std::size_t demanded = 0;
  bool demanding = false;
  /// min(|D^s_k|, demanded) for demanding classes.
  std::optional<std::size_t> provisional;
  std::size_t final_count = 0;
};

struct DemandPlan {
  std::vector<ClassDemand> classes;
  std::size_t u = 0;
  bool fulfilled = false;
  /// Demands existed but some class could receive nothing, so nothing is sent.
  bool starved = false;

  std::vector<std::size_t> demanded() const {
    std::vector<std::size_t> out;
    for (const auto& cls : classes) out.push_back(cls.demanded);
    return out;
  }
  std::vector<std::size_t> final_counts() const {
    std::vector<std::size_t> out;
    for (const auto& cls : classes) out.push_back(cls.final_count);
    return out;
  }
};

/// F_ik = beta_ik - z_i and demanded count floor(F_ik |D_ik|). Classes at the
/// minimum ratio, and classes whose floor rounds to zero, demand nothing.
inline DemandPlan compute_demands(const NoiseEstimate& estimate, const std::vector<std::size_t>& class_sizes,
                                  DemandCap cap = DemandCap::kOneMinusZ) {
  require(class_sizes.size() == estimate.classes.size(), ErrorKind::kDomain,
          "class_sizes and estimate disagree on class count");
  DemandPlan plan;
  plan.classes.resize(class_sizes.size());
  for (std::size_t k = 0; k < class_sizes.size(); ++k) {
    auto& cls = plan.classes[k];
    const double beta = estimate.classes[k].beta;
    if (static_cast<ClassId>(k) == estimate.b || beta <= estimate.z || estimate.classes[k].empty_class) continue;
    cls.fraction = beta - estimate.z;
    cls.fraction = std::min(cls.fraction, cap == DemandCap::kZ ? estimate.z : 1.0 - estimate.z);
    // Guard against representation error in the ratio difference (0.3 - 0.1).
    cls.demanded = static_cast<std::size_t>(std::floor(cls.fraction * static_cast<double>(class_sizes[k]) + 1e-9));
    cls.demanding = cls.demanded > 0;
  }
  return plan;
}

/// Applies the server's capacity and the minimum-allocation rule: every
/// demanding class receives the same count u, or nothing when u = 0.
inline DemandPlan fulfill_demands(DemandPlan plan, const std::vector<std::size_t>& server_class_sizes) {
  require(server_class_sizes.size() == plan.classes.size(), ErrorKind::kDomain,
          "server class sizes disagree on class count");
  std::size_t u = std::numeric_limits<std::size_t>::max();
  bool any = false;
  for (std::size_t k = 0; k < plan.classes.size(); ++k) {
    auto& cls = plan.classes[k];
    if (!cls.demanding) continue;
    cls.provisional = std::min(server_class_sizes[k], cls.demanded);
    u = std::min(u, *cls.provisional);
    any = true;
  }
  plan.u = any ? u : 0;
  plan.starved = any && plan.u == 0;
  for (auto& cls : plan.classes) cls.final_count = cls.demanding ? plan.u : 0;
  plan.fulfilled = true;
  return plan;
}

/// Everything that crossed between a participant and the server.
struct ExchangeTranscript {
  struct Request {
    ClassId cls = 0;
    std::size_t count = 0;
  };
  struct Delivery {
    ClassId cls = 0;
    std::vector<InstanceId> ids;
  };
  std::vector<Request> requests;      // participant -> server
  std::vector<Delivery> deliveries;   // server -> participant
  DemandPlan plan;
  std::vector<std::size_t> truncated;  // per class, dropped to honour |S^_ik| <= |D_ik|
};

struct ExchangeResult {
  /// Participant training data after the exchange: the union of S^_ik.
  Dataset dataset;
  std::vector<std::vector<InstanceId>> updated_noise_free;  // S^_ik ids per class
  NoiseEstimate reestimate;
  std::vector<double> betas;
  double beta = 0.0;
  ExchangeTranscript transcript;
};

/// Sends the final plan's counts to the server, receives uniformly sampled
/// noise-free server instances, rebuilds the participant's class sets and
/// re-estimates its noise ratio.
inline ExchangeResult apply_exchange(const Dataset& participant, const NoiseEstimate& estimate, const Dataset& server,
                                     const DemandPlan& plan, std::uint64_t seed, const TrainerConfig& config,
                                     const EstimatorOptions& options = {}) {
  require(plan.fulfilled, ErrorKind::kAllocation, "plan has not been through fulfill_demands");
  require(participant.class_count == server.class_count && participant.dim == server.dim, ErrorKind::kSchema,
          "participant and server datasets disagree on shape");
  const auto original_sizes = participant.class_sizes();
  ExchangeResult result;
  result.transcript.plan = plan;
  result.transcript.truncated.assign(plan.classes.size(), 0);
  result.dataset = select_ids(participant, estimate.noise_free_ids());
  result.updated_noise_free.resize(plan.classes.size());
  for (std::size_t k = 0; k < plan.classes.size(); ++k) result.updated_noise_free[k] = estimate.classes[k].noise_free;

  std::unordered_set<InstanceId> participant_ids;
  for (const auto& inst : participant.instances) participant_ids.insert(inst.id);

  for (std::size_t k = 0; k < plan.classes.size(); ++k) {
    std::size_t count = plan.classes[k].final_count;
    if (count == 0) continue;
    const std::size_t kept = estimate.classes[k].noise_free.size();
    if (kept + count > original_sizes[k]) {
      const std::size_t allowed = original_sizes[k] > kept ? original_sizes[k] - kept : 0;
      result.transcript.truncated[k] = count - allowed;
      count = allowed;
    }
    result.transcript.requests.push_back({static_cast<ClassId>(k), count});
    if (count == 0) continue;

    const Dataset pool = class_subset(server, static_cast<ClassId>(k));
    require(count <= pool.size(), ErrorKind::kAllocation,
            "class " + std::to_string(k) + ": " + std::to_string(count) + " requested but server holds " +
                std::to_string(pool.size()));
    Rng rng(derive_seed(seed, "server_sample", k));
    ExchangeTranscript::Delivery delivery{static_cast<ClassId>(k), {}};
    for (std::size_t idx : rng.sample_without_replacement(pool.size(), count)) {
      Instance inst = pool.instances[idx];
      require(!participant_ids.contains(inst.id), ErrorKind::kAllocation,
              "server instance id " + std::to_string(inst.id) + " collides with participant data");
      if (!inst.true_label) inst.true_label = inst.observed_label;
      delivery.ids.push_back(inst.id);
      result.updated_noise_free[k].push_back(inst.id);
      result.dataset.instances.push_back(std::move(inst));
    }
    result.transcript.deliveries.push_back(std::move(delivery));
  }

  result.reestimate = estimate_noise(result.dataset, config, derive_seed(seed, "reestimate"), options);
  result.betas = result.reestimate.betas();
  result.beta = result.reestimate.beta;
  return result;
}

inline nlohmann::json to_json(const ExchangeTranscript& transcript) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t k = 0; k < transcript.plan.classes.size(); ++k) {
    const auto& cls = transcript.plan.classes[k];
    classes.push_back({{"class", k},
                       {"fraction", cls.fraction},
                       {"demanded", cls.demanded},
                       {"provisional", cls.provisional ? nlohmann::json(*cls.provisional) : nlohmann::json(nullptr)},
                       {"final", cls.final_count},
                       {"truncated", transcript.truncated.empty() ? 0 : transcript.truncated[k]}});
  }
  nlohmann::json requests = nlohmann::json::array();
  for (const auto& r : transcript.requests) requests.push_back({{"class", r.cls}, {"count", r.count}});
  nlohmann::json deliveries = nlohmann::json::array();
  for (const auto& d : transcript.deliveries) deliveries.push_back({{"class", d.cls}, {"count", d.ids.size()}});
  return {{"classes", classes},
          {"u", transcript.plan.u},
          {"starved", transcript.plan.starved},
          {"requests", requests},
          {"deliveries", deliveries}};
}

}  // namespace fednl
