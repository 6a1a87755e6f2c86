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

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fednl/dataset.hpp"
#include "fednl/engine.hpp"
#include "fednl/error.hpp"
#include "fednl/noise_model.hpp"
#include "fednl/round_estimator.hpp"
#include "fednl/trainer.hpp"

namespace fednl {

/// Everything one experiment needs, read from a `key = value` file.
struct ExperimentConfig {
  enum class Source { kSynthetic, kFile };
  enum class Noise { kNone, kSymmetric, kAsymmetric, kFile };
  enum class Algorithm { kFedNL, kFedAvg };
  enum class Schedule { kConstant, kDiminishing, kDerived };

  std::optional<std::uint64_t> seed;

  Source source = Source::kSynthetic;
  std::string data_path;
  char delimiter = ',';
  int classes = 3;
  int per_class = 200;
  int dim = 2;
  double separation = 8.0;

  double server_fraction = 0.2;
  double local_test_fraction = 0.2;
  std::size_t participants = 4;
  PartitionStrategy partition;

  Noise noise = Noise::kNone;
  double noise_beta = 0.0;
  std::vector<NoisePair> noise_pairs;
  std::string noise_matrix;
  double out_of_space = 0.0;
  /// Indices of noisy participants; empty optional means all of them.
  std::optional<std::vector<std::size_t>> noisy_participants;

  Algorithm algorithm = Algorithm::kFedNL;
  FederationConfig federation;
  Schedule schedule = Schedule::kConstant;
  std::optional<int> estimator_epochs;
  std::optional<std::size_t> estimator_batch;
  std::optional<double> estimator_lr;

  std::vector<double> q_o{0.01};
  std::vector<int> epochs{1};
  /// Symmetric noise levels for the rounds sweep; empty uses `noise` as is.
  std::vector<double> noise_levels;
  bool alpha_minus_one = false;
  int smoothness_pairs = 100;
  int b_batches = 50;
  int init_draws = 10;

  std::string output_root = ".";
  std::string output_name = "run";
};

inline constexpr const char* kOutputRootEnv = "FEDNL_OUTPUT_ROOT";

namespace detail {

struct BadValue : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shortest text that reads back to the same double.
inline std::string real_text(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_real(const std::string& s) {
  double v = 0.0;
  if (!parse_double(s, v) || !std::isfinite(v)) throw BadValue("expected a real number, got '" + s + "'");
  return v;
}

inline long long parse_integer(const std::string& s) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (s.empty() || pos != s.size()) throw BadValue("expected an integer, got '" + s + "'");
  return v;
}

inline long long parse_at_least(const std::string& s, long long low) {
  const long long v = parse_integer(s);
  if (v < low) throw BadValue("must be >= " + std::to_string(low) + ", got " + s);
  return v;
}

inline std::uint64_t parse_seed(const std::string& s) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (s.empty() || s[0] == '-' || pos != s.size()) throw BadValue("expected a non-negative integer, got '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw BadValue("expected true or false, got '" + s + "'");
}

inline std::string bool_text(bool b) { return b ? "true" : "false"; }

template <typename T>
T parse_choice(const std::string& s, std::initializer_list<std::pair<const char*, T>> choices) {
  std::string names;
  for (const auto& [name, value] : choices) {
    if (s == name) return value;
    names += names.empty() ? name : std::string(" | ") + name;
  }
  throw BadValue("expected one of " + names + ", got '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  for (auto& item : split_line(s, ',')) out.push_back(trim(item));
  return out;
}

inline std::vector<double> parse_real_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(parse_real(item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& text) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + text(items[i]);
  return out;
}

/// "0>1:0.3,1>2:0.3"
inline std::vector<NoisePair> parse_pairs(const std::string& s) {
  std::vector<NoisePair> out;
  for (const auto& item : split_list(s)) {
    const auto arrow = item.find('>');
    const auto colon = item.find(':');
    if (arrow == std::string::npos || colon == std::string::npos || colon < arrow) {
      throw BadValue("pairs are written src>dst:mass, got '" + item + "'");
    }
    NoisePair p;
    p.src = static_cast<ClassId>(parse_integer(trim(item.substr(0, arrow))));
    p.dst = static_cast<ClassId>(parse_integer(trim(item.substr(arrow + 1, colon - arrow - 1))));
    p.mass = parse_real(trim(item.substr(colon + 1)));
    out.push_back(p);
  }
  return out;
}

inline std::string pairs_text(const std::vector<NoisePair>& pairs) {
  return join<NoisePair>(pairs, [](const NoisePair& p) {
    return std::to_string(p.src) + ">" + std::to_string(p.dst) + ":" + real_text(p.mass);
  });
}

}  // namespace detail

struct ConfigKey {
  const char* name;
  const char* doc;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  /// Canonical value for the echo; nullopt leaves the key out.
  std::function<std::optional<std::string>(const ExperimentConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using C = ExperimentConfig;
  using namespace detail;
  using Out = std::optional<std::string>;
  static const std::vector<ConfigKey> keys = {
      {"seed", "master seed (must match --seed when both are given)",
       [](C& c, const std::string& v) { c.seed = parse_seed(v); },
       [](const C& c) -> Out { return c.seed ? Out(std::to_string(*c.seed)) : std::nullopt; }},
      {"data.source", "synthetic | file",
       [](C& c, const std::string& v) {
         c.source = parse_choice<C::Source>(v, {{"synthetic", C::Source::kSynthetic}, {"file", C::Source::kFile}});
       },
       [](const C& c) -> Out { return c.source == C::Source::kFile ? "file" : "synthetic"; }},
      {"data.path", "dataset file when data.source = file", [](C& c, const std::string& v) { c.data_path = v; },
       [](const C& c) -> Out { return c.source == C::Source::kFile ? Out(c.data_path) : std::nullopt; }},
      {"data.delimiter", "single-character column delimiter, or tab",
       [](C& c, const std::string& v) {
         if (v == "tab") {
           c.delimiter = '\t';
         } else if (v.size() == 1) {
           c.delimiter = v[0];
         } else {
           throw BadValue("expected a single character or tab, got '" + v + "'");
         }
       },
       [](const C& c) -> Out { return c.delimiter == '\t' ? "tab" : std::string(1, c.delimiter); }},
      {"data.classes", "synthetic class count", [](C& c, const std::string& v) { c.classes = int(parse_at_least(v, 2)); },
       [](const C& c) -> Out { return std::to_string(c.classes); }},
      {"data.per_class", "synthetic instances per class",
       [](C& c, const std::string& v) { c.per_class = int(parse_at_least(v, 1)); },
       [](const C& c) -> Out { return std::to_string(c.per_class); }},
      {"data.dim", "synthetic feature dimension", [](C& c, const std::string& v) { c.dim = int(parse_at_least(v, 1)); },
       [](const C& c) -> Out { return std::to_string(c.dim); }},
      {"data.separation", "minimum distance between synthetic class means",
       [](C& c, const std::string& v) { c.separation = parse_real(v); },
       [](const C& c) -> Out { return real_text(c.separation); }},
      {"server.fraction", "share of the data held by the server",
       [](C& c, const std::string& v) { c.server_fraction = parse_real(v); },
       [](const C& c) -> Out { return real_text(c.server_fraction); }},
      {"server.test_fraction", "share of the server data held out for global evaluation",
       [](C& c, const std::string& v) { c.federation.server_test_fraction = parse_real(v); },
       [](const C& c) -> Out { return real_text(c.federation.server_test_fraction); }},
      {"local_test.fraction", "share of each participant held out for local evaluation",
       [](C& c, const std::string& v) { c.local_test_fraction = parse_real(v); },
       [](const C& c) -> Out { return real_text(c.local_test_fraction); }},
      {"partition.participants", "number of participants N",
       [](C& c, const std::string& v) { c.participants = std::size_t(parse_at_least(v, 1)); },
       [](const C& c) -> Out { return std::to_string(c.participants); }},
      {"partition.strategy", "shuffle | label_skew",
       [](C& c, const std::string& v) {
         c.partition.kind = parse_choice<PartitionStrategy::Kind>(
             v, {{"shuffle", PartitionStrategy::Kind::kShuffleSplit}, {"label_skew", PartitionStrategy::Kind::kLabelSkew}});
       },
       [](const C& c) -> Out {
         return c.partition.kind == PartitionStrategy::Kind::kLabelSkew ? "label_skew" : "shuffle";
       }},
      {"partition.k_major", "majority classes per participant under label_skew",
       [](C& c, const std::string& v) { c.partition.k_major = int(parse_at_least(v, 1)); },
       [](const C& c) -> Out { return std::to_string(c.partition.k_major); }},
      {"partition.skew", "share of a participant's data drawn from its majority classes",
       [](C& c, const std::string& v) { c.partition.skew = parse_real(v); },
       [](const C& c) -> Out { return real_text(c.partition.skew); }},
      {"noise.type", "none | symmetric | asymmetric | file",
       [](C& c, const std::string& v) {
         c.noise = parse_choice<C::Noise>(v, {{"none", C::Noise::kNone},
                                              {"symmetric", C::Noise::kSymmetric},
                                              {"asymmetric", C::Noise::kAsymmetric},
                                              {"file", C::Noise::kFile}});
       },
       [](const C& c) -> Out {
         switch (c.noise) {
           case C::Noise::kSymmetric: return "symmetric";
           case C::Noise::kAsymmetric: return "asymmetric";
           case C::Noise::kFile: return "file";
           default: return "none";
         }
       }},
      {"noise.beta", "symmetric noise ratio", [](C& c, const std::string& v) { c.noise_beta = parse_real(v); },
       [](const C& c) -> Out { return c.noise == C::Noise::kSymmetric ? Out(real_text(c.noise_beta)) : std::nullopt; }},
      {"noise.pairs", "asymmetric flips as src>dst:mass, comma separated",
       [](C& c, const std::string& v) { c.noise_pairs = parse_pairs(v); },
       [](const C& c) -> Out { return c.noise == C::Noise::kAsymmetric ? Out(pairs_text(c.noise_pairs)) : std::nullopt; }},
      {"noise.matrix", "transition matrix file when noise.type = file",
       [](C& c, const std::string& v) { c.noise_matrix = v; },
       [](const C& c) -> Out { return c.noise == C::Noise::kFile ? Out(c.noise_matrix) : std::nullopt; }},
      {"noise.out_of_space", "extra mass moved to the out-of-space label",
       [](C& c, const std::string& v) { c.out_of_space = parse_real(v); },
       [](const C& c) -> Out { return real_text(c.out_of_space); }},
      {"noise.participants", "all | comma-separated participant indices",
       [](C& c, const std::string& v) {
         if (v == "all") {
           c.noisy_participants.reset();
           return;
         }
         std::vector<std::size_t> idx;
         for (const auto& item : split_list(v)) idx.push_back(std::size_t(parse_at_least(item, 0)));
         c.noisy_participants = idx;
       },
       [](const C& c) -> Out {
         if (!c.noisy_participants) return "all";
         return join<std::size_t>(*c.noisy_participants, [](const std::size_t& i) { return std::to_string(i); });
       }},
      {"federation.algorithm", "fednl | fedavg",
       [](C& c, const std::string& v) {
         c.algorithm = parse_choice<C::Algorithm>(v, {{"fednl", C::Algorithm::kFedNL}, {"fedavg", C::Algorithm::kFedAvg}});
       },
       [](const C& c) -> Out { return c.algorithm == C::Algorithm::kFedAvg ? "fedavg" : "fednl"; }},
      {"federation.rounds", "communication rounds R",
       [](C& c, const std::string& v) { c.federation.rounds = std::size_t(parse_at_least(v, 1)); },
       [](const C& c) -> Out { return std::to_string(c.federation.rounds); }},
      {"federation.procedure1", "run noise estimation",
       [](C& c, const std::string& v) { c.federation.run_procedure1 = parse_bool(v); },
       [](const C& c) -> Out { return bool_text(c.federation.run_procedure1); }},
      {"federation.procedure2", "run server-assisted noise normalization",
       [](C& c, const std::string& v) { c.federation.run_procedure2 = parse_bool(v); },
       [](const C& c) -> Out { return bool_text(c.federation.run_procedure2); }},
      {"federation.weighting", "fednl | fedavg-size",
       [](C& c, const std::string& v) {
         c.federation.weighting =
             parse_choice<Weighting>(v, {{"fednl", Weighting::kFedNL}, {"fedavg-size", Weighting::kFedAvgSize}});
       },
       [](const C& c) -> Out { return c.federation.weighting == Weighting::kFedNL ? "fednl" : "fedavg-size"; }},
      {"federation.freeze_epsilon", "compute contributions once after round 1",
       [](C& c, const std::string& v) { c.federation.freeze_epsilon = parse_bool(v); },
       [](const C& c) -> Out { return bool_text(c.federation.freeze_epsilon); }},
      {"federation.effective_size", "noise_free (n(1-beta)) | literal (n beta)",
       [](C& c, const std::string& v) {
         c.federation.effective_size = parse_choice<EffectiveSize>(
             v, {{"noise_free", EffectiveSize::kNoiseFree}, {"literal", EffectiveSize::kLiteral}});
       },
       [](const C& c) -> Out {
         return c.federation.effective_size == EffectiveSize::kNoiseFree ? "noise_free" : "literal";
       }},
      {"federation.influence", "loss_change | param_norm",
       [](C& c, const std::string& v) {
         c.federation.influence = parse_choice<InfluenceMeasure>(
             v, {{"loss_change", InfluenceMeasure::kLossChange}, {"param_norm", InfluenceMeasure::kParamNorm}});
       },
       [](const C& c) -> Out {
         return c.federation.influence == InfluenceMeasure::kLossChange ? "loss_change" : "param_norm";
       }},
      {"federation.demand_cap", "one_minus_z | z",
       [](C& c, const std::string& v) {
         c.federation.demand_cap =
             parse_choice<DemandCap>(v, {{"one_minus_z", DemandCap::kOneMinusZ}, {"z", DemandCap::kZ}});
       },
       [](const C& c) -> Out { return c.federation.demand_cap == DemandCap::kZ ? "z" : "one_minus_z"; }},
      {"federation.per_class_resplit", "split each class into folds separately",
       [](C& c, const std::string& v) { c.federation.per_class_resplit = parse_bool(v); },
       [](const C& c) -> Out { return bool_text(c.federation.per_class_resplit); }},
      {"federation.gamma_min", "influence floor", [](C& c, const std::string& v) { c.federation.gamma_min = parse_real(v); },
       [](const C& c) -> Out { return real_text(c.federation.gamma_min); }},
      {"federation.init_range", "server init draws weights from [-r, r]",
       [](C& c, const std::string& v) { c.federation.init_range = parse_real(v); },
       [](const C& c) -> Out { return real_text(c.federation.init_range); }},
      {"trainer.local_epochs", "local epochs E",
       [](C& c, const std::string& v) { c.federation.trainer.local_epochs = int(parse_at_least(v, 1)); },
       [](const C& c) -> Out { return std::to_string(c.federation.trainer.local_epochs); }},
      {"trainer.batch_size", "mini-batch size",
       [](C& c, const std::string& v) { c.federation.trainer.batch_size = std::size_t(parse_at_least(v, 1)); },
       [](const C& c) -> Out { return std::to_string(c.federation.trainer.batch_size); }},
      {"trainer.l2_lambda", "L2 coefficient (strong convexity mu)",
       [](C& c, const std::string& v) { c.federation.trainer.l2_lambda = parse_real(v); },
       [](const C& c) -> Out { return real_text(c.federation.trainer.l2_lambda); }},
      {"trainer.schedule", "constant | diminishing | derived (theta = 2/mu, alpha = max(8L/mu, E))",
       [](C& c, const std::string& v) {
         c.schedule = parse_choice<C::Schedule>(
             v, {{"constant", C::Schedule::kConstant}, {"diminishing", C::Schedule::kDiminishing}, {"derived", C::Schedule::kDerived}});
       },
       [](const C& c) -> Out {
         switch (c.schedule) {
           case C::Schedule::kDiminishing: return "diminishing";
           case C::Schedule::kDerived: return "derived";
           default: return "constant";
         }
       }},
      {"trainer.lr", "constant learning rate", [](C& c, const std::string& v) { c.federation.trainer.lr_schedule.eta = parse_real(v); },
       [](const C& c) -> Out {
         return c.schedule == C::Schedule::kConstant ? Out(real_text(c.federation.trainer.lr_schedule.eta)) : std::nullopt;
       }},
      {"trainer.theta", "diminishing schedule numerator",
       [](C& c, const std::string& v) { c.federation.trainer.lr_schedule.theta = parse_real(v); },
       [](const C& c) -> Out {
         return c.schedule == C::Schedule::kDiminishing ? Out(real_text(c.federation.trainer.lr_schedule.theta)) : std::nullopt;
       }},
      {"trainer.alpha", "diminishing schedule offset",
       [](C& c, const std::string& v) { c.federation.trainer.lr_schedule.alpha = parse_real(v); },
       [](const C& c) -> Out {
         return c.schedule == C::Schedule::kDiminishing ? Out(real_text(c.federation.trainer.lr_schedule.alpha)) : std::nullopt;
       }},
      {"estimator.local_epochs", "local epochs inside noise estimation (default: trainer's)",
       [](C& c, const std::string& v) { c.estimator_epochs = int(parse_at_least(v, 1)); },
       [](const C& c) -> Out { return c.estimator_epochs ? Out(std::to_string(*c.estimator_epochs)) : std::nullopt; }},
      {"estimator.batch_size", "mini-batch size inside noise estimation",
       [](C& c, const std::string& v) { c.estimator_batch = std::size_t(parse_at_least(v, 1)); },
       [](const C& c) -> Out { return c.estimator_batch ? Out(std::to_string(*c.estimator_batch)) : std::nullopt; }},
      {"estimator.lr", "constant learning rate inside noise estimation",
       [](C& c, const std::string& v) { c.estimator_lr = parse_real(v); },
       [](const C& c) -> Out { return c.estimator_lr ? Out(real_text(*c.estimator_lr)) : std::nullopt; }},
      {"rounds.q_o", "target precisions for the rounds grid",
       [](C& c, const std::string& v) { c.q_o = parse_real_list(v); },
       [](const C& c) -> Out { return join<double>(c.q_o, real_text); }},
      {"rounds.epochs", "local epochs for the rounds grid",
       [](C& c, const std::string& v) {
         c.epochs.clear();
         for (const auto& item : split_list(v)) c.epochs.push_back(int(parse_at_least(item, 1)));
       },
       [](const C& c) -> Out { return join<int>(c.epochs, [](const int& e) { return std::to_string(e); }); }},
      {"rounds.noise", "symmetric noise levels for the rounds grid",
       [](C& c, const std::string& v) { c.noise_levels = parse_real_list(v); },
       [](const C& c) -> Out { return join<double>(c.noise_levels, real_text); }},
      {"rounds.alpha_minus_one", "use max(8L/mu, E) - 1",
       [](C& c, const std::string& v) { c.alpha_minus_one = parse_bool(v); },
       [](const C& c) -> Out { return bool_text(c.alpha_minus_one); }},
      {"rounds.smoothness_pairs", "random weight pairs for measuring L",
       [](C& c, const std::string& v) { c.smoothness_pairs = int(parse_at_least(v, 1)); },
       [](const C& c) -> Out { return std::to_string(c.smoothness_pairs); }},
      {"rounds.batches", "sampled batches per participant for sigma and G",
       [](C& c, const std::string& v) { c.b_batches = int(parse_at_least(v, 1)); },
       [](const C& c) -> Out { return std::to_string(c.b_batches); }},
      {"rounds.init_draws", "server inits averaged into the initial gap",
       [](C& c, const std::string& v) { c.init_draws = int(parse_at_least(v, 1)); },
       [](const C& c) -> Out { return std::to_string(c.init_draws); }},
      {"output.root", "directory that holds run directories", [](C& c, const std::string& v) { c.output_root = v; },
       [](const C& c) -> Out { return c.output_root; }},
      {"output.name", "run directory name", [](C& c, const std::string& v) { c.output_name = v; },
       [](const C& c) -> Out { return c.output_name; }},
  };
  return keys;
}

namespace detail {

inline void check_fraction(std::vector<std::string>& errors, const char* key, double v, bool allow_zero) {
  if (!(v < 1.0 && (allow_zero ? v >= 0.0 : v > 0.0))) {
    errors.push_back(std::string(key) + ": must lie in " + (allow_zero ? "[0, 1)" : "(0, 1)") + ", got " + real_text(v));
  }
}

/// Cross-field checks; each message starts with the offending key.
inline std::vector<std::string> check(const ExperimentConfig& c) {
  using C = ExperimentConfig;
  std::vector<std::string> errors;
  auto add = [&](const std::string& key, const std::string& msg) { errors.push_back(key + ": " + msg); };
  if (!c.seed) add("seed", "a master seed is required");
  if (c.source == C::Source::kFile) {
    if (c.data_path.empty()) {
      add("data.path", "required when data.source = file");
    } else if (!std::filesystem::is_regular_file(c.data_path)) {
      add("data.path", "no such file '" + c.data_path + "'");
    }
  } else if (!(c.separation > 0.0)) {
    add("data.separation", "must be positive");
  }
  check_fraction(errors, "server.fraction", c.server_fraction, true);
  check_fraction(errors, "server.test_fraction", c.federation.server_test_fraction, false);
  check_fraction(errors, "local_test.fraction", c.local_test_fraction, true);
  if (c.partition.skew < 0.0 || c.partition.skew > 1.0) add("partition.skew", "must lie in [0, 1]");
  if (c.source == C::Source::kSynthetic && c.partition.k_major > c.classes) {
    add("partition.k_major", "exceeds data.classes");
  }

  const bool beta_ok = c.noise_beta >= 0.0 && c.noise_beta < 1.0;
  if (!beta_ok) add("noise.beta", "must lie in [0, 1), got " + real_text(c.noise_beta));
  switch (c.noise) {
    case C::Noise::kSymmetric:
      if (beta_ok && c.source == C::Source::kSynthetic) {
        try {
          symmetric_matrix(c.classes, c.noise_beta);
        } catch (const Error& e) {
          add("noise.beta", e.what());
        }
      }
      break;
    case C::Noise::kAsymmetric:
      if (c.noise_pairs.empty()) {
        add("noise.pairs", "required when noise.type = asymmetric");
      } else if (c.source == C::Source::kSynthetic) {
        try {
          asymmetric_matrix(c.classes, c.noise_pairs);
        } catch (const Error& e) {
          add("noise.pairs", e.what());
        }
      }
      break;
    case C::Noise::kFile:
      if (c.noise_matrix.empty()) {
        add("noise.matrix", "required when noise.type = file");
      } else if (!std::filesystem::is_regular_file(c.noise_matrix)) {
        add("noise.matrix", "no such file '" + c.noise_matrix + "'");
      }
      break;
    case C::Noise::kNone:
      break;
  }
  check_fraction(errors, "noise.out_of_space", c.out_of_space, true);
  if (c.noisy_participants) {
    for (auto i : *c.noisy_participants) {
      if (i >= c.participants) add("noise.participants", "index " + std::to_string(i) + " is out of range");
    }
  }

  const auto& fed = c.federation;
  if (fed.run_procedure2 && !fed.run_procedure1 && c.algorithm == C::Algorithm::kFedNL) {
    add("federation.procedure2", "requires federation.procedure1 = true");
  }
  if (fed.run_procedure2 && fed.run_procedure1 && c.algorithm == C::Algorithm::kFedNL && c.server_fraction == 0.0) {
    add("server.fraction", "noise normalization needs server data");
  }
  if (!(fed.gamma_min > 0.0)) add("federation.gamma_min", "must be positive");
  if (!(fed.init_range >= 0.0)) add("federation.init_range", "must be non-negative");
  const auto& tr = fed.trainer;
  if (!(tr.l2_lambda >= 0.0)) add("trainer.l2_lambda", "must be non-negative");
  switch (c.schedule) {
    case C::Schedule::kConstant:
      if (!(tr.lr_schedule.eta > 0.0)) add("trainer.lr", "must be positive");
      break;
    case C::Schedule::kDiminishing:
      if (!(tr.lr_schedule.theta > 0.0)) add("trainer.theta", "must be positive");
      if (!(tr.lr_schedule.alpha > 0.0)) add("trainer.alpha", "must be positive");
      break;
    case C::Schedule::kDerived:
      if (!(tr.l2_lambda > 0.0)) add("trainer.schedule", "derived schedule needs trainer.l2_lambda > 0");
      break;
  }
  if (c.estimator_lr && !(*c.estimator_lr > 0.0)) add("estimator.lr", "must be positive");
  for (double q : c.q_o) {
    if (!(q > 0.0)) add("rounds.q_o", "entries must be positive, got " + real_text(q));
  }
  for (double b : c.noise_levels) {
    if (!(b >= 0.0 && b < 1.0)) add("rounds.noise", "entries must lie in [0, 1), got " + real_text(b));
  }
  if (c.output_name.empty()) add("output.name", "must not be empty");
  return errors;
}

}  // namespace detail

/// Parses and validates a config. Every problem found is reported in one
/// error, one per line. A given `seed` fills in a missing `seed` key and must
/// agree with a present one.
inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "config",
                                     std::optional<std::uint64_t> seed = std::nullopt) {
  std::map<std::string, const ConfigKey*> by_name;
  for (const auto& k : config_keys()) by_name[k.name] = &k;

  ExperimentConfig config;
  std::vector<std::string> errors;
  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string text = detail::trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + "expected key = value");
      continue;
    }
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = detail::trim(text.substr(eq + 1));
    const auto it = by_name.find(key);
    if (it == by_name.end()) {
      errors.push_back(where + key + ": unknown key");
      continue;
    }
    if (auto prev = seen.find(key); prev != seen.end()) {
      errors.push_back(where + key + ": already set on line " + std::to_string(prev->second));
      continue;
    }
    seen[key] = lineno;
    try {
      it->second->set(config, value);
    } catch (const detail::BadValue& e) {
      errors.push_back(where + key + ": " + e.what());
    }
  }
  if (seed) {
    if (config.seed && *config.seed != *seed) {
      errors.push_back(origin + ": seed: config says " + std::to_string(*config.seed) + " but the command line says " +
                       std::to_string(*seed));
    }
    config.seed = seed;
  }
  for (const auto& e : detail::check(config)) errors.push_back(origin + ": " + e);
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " config error(s):";
    for (const auto& e : errors) msg += "\n  " + e;
    fail(ErrorKind::kConfig, msg);
  }
  return config;
}

inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config",
                                     std::optional<std::uint64_t> seed = std::nullopt) {
  std::istringstream in(text);
  return parse_config(in, origin, seed);
}

inline ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed = std::nullopt) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kNotFound, "cannot open config '" + path + "'");
  return parse_config(in, path, seed);
}

/// Canonical `key = value` text; parsing it gives back the same config.
inline std::string echo_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& k : config_keys()) {
    if (auto v = k.get(config)) out += std::string(k.name) + " = " + *v + "\n";
  }
  return out;
}

inline std::filesystem::path default_run_dir(const ExperimentConfig& config) {
  const char* env = std::getenv(kOutputRootEnv);
  const std::filesystem::path root = env && *env ? std::filesystem::path(env) : std::filesystem::path(config.output_root);
  return root / config.output_name;
}

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  Dataset server;
  std::vector<Dataset> clean_train;
  std::vector<Dataset> train;
  std::vector<Dataset> local_tests;
  std::vector<bool> noisy;
  std::vector<std::optional<NoiseReport>> noise_reports;
};

inline Dataset load_source(const ExperimentConfig& config) {
  if (config.source == ExperimentConfig::Source::kFile) {
    DatasetSchema schema;
    schema.delimiter = config.delimiter;
    schema.name = "data";
    return load_dataset(config.data_path, schema);
  }
  return synth_gaussian(config.classes, config.per_class, config.dim, config.separation,
                        derive_seed(*config.seed, "data"));
}

inline TransitionMatrix noise_matrix(const ExperimentConfig& config, int classes, std::optional<double> beta = {}) {
  using N = ExperimentConfig::Noise;
  TransitionMatrix p = TransitionMatrix::identity(classes);
  if (beta) {
    p = symmetric_matrix(classes, *beta);
  } else if (config.noise == N::kSymmetric) {
    p = symmetric_matrix(classes, config.noise_beta);
  } else if (config.noise == N::kAsymmetric) {
    p = asymmetric_matrix(classes, config.noise_pairs);
  } else if (config.noise == N::kFile) {
    p = load_transition_matrix(config.noise_matrix);
  }
  if (config.out_of_space > 0.0 && !p.has_out_of_space()) p = with_out_of_space(p, config.out_of_space);
  return p;
}

inline bool has_noise(const ExperimentConfig& config) {
  return config.noise != ExperimentConfig::Noise::kNone || config.out_of_space > 0.0;
}

/// Injects the configured noise (or symmetric `beta`) into the noisy
/// participants' training sets.
inline void inject_participants(PreparedData& data, const ExperimentConfig& config, std::optional<double> beta = {}) {
  data.train = data.clean_train;
  data.noise_reports.assign(data.train.size(), std::nullopt);
  if (!beta && !has_noise(config)) return;
  if (beta && *beta == 0.0 && config.out_of_space == 0.0) return;
  const auto p = noise_matrix(config, data.train.empty() ? 0 : data.train[0].class_count, beta);
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    if (!data.noisy[i]) continue;
    auto [noisy, report] = inject_noise(data.clean_train[i], p, derive_seed(*config.seed, "noise", i));
    data.train[i] = std::move(noisy);
    data.noise_reports[i] = std::move(report);
  }
}

inline PreparedData prepare_data(const ExperimentConfig& config) {
  require(config.seed.has_value(), ErrorKind::kConfig, "seed: a master seed is required");
  const std::uint64_t seed = *config.seed;
  const Dataset source = load_source(config);
  PreparedData data;
  Dataset rest = source;
  if (config.server_fraction > 0.0) {
    auto [server, remainder] = split_holdout(source, config.server_fraction, derive_seed(seed, "server_holdout"));
    data.server = std::move(server);
    data.server.name = "server";
    rest = std::move(remainder);
  }
  auto parts = partition_non_iid(rest, config.participants, derive_seed(seed, "partition"), config.partition);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    Dataset test = parts[i].like("");
    Dataset train = parts[i];
    if (config.local_test_fraction > 0.0) {
      std::tie(test, train) = split_holdout(parts[i], config.local_test_fraction, derive_seed(seed, "local_test", i));
    }
    train.name = "participant-" + std::to_string(i);
    test.name = train.name + "-test";
    data.clean_train.push_back(std::move(train));
    data.local_tests.push_back(std::move(test));
  }
  data.noisy.assign(parts.size(), !config.noisy_participants.has_value());
  if (config.noisy_participants) {
    for (auto i : *config.noisy_participants) data.noisy.at(i) = true;
  }
  inject_participants(data, config);
  return data;
}

inline FederationConfig federation_config(const ExperimentConfig& config, std::span<const Dataset> train,
                                          std::optional<SmoothnessParams>* measured = nullptr) {
  FederationConfig fed = config.federation;
  fed.seed = *config.seed;
  auto& sched = fed.trainer.lr_schedule;
  switch (config.schedule) {
    case ExperimentConfig::Schedule::kConstant:
      sched = LrSchedule::constant(sched.eta);
      break;
    case ExperimentConfig::Schedule::kDiminishing:
      sched = LrSchedule::diminishing(sched.theta, sched.alpha);
      break;
    case ExperimentConfig::Schedule::kDerived: {
      const Dataset pooled = pool_datasets(train);
      const auto smooth = measure_smoothness(TrainingView(pooled), fed.trainer, derive_seed(fed.seed, "smoothness"),
                                             config.smoothness_pairs);
      sched = LrSchedule::diminishing(2.0 / smooth.mu, round_alpha(smooth, fed.trainer.local_epochs, config.alpha_minus_one));
      if (measured) *measured = smooth;
      break;
    }
  }
  if (config.estimator_epochs || config.estimator_batch || config.estimator_lr) {
    TrainerConfig est = fed.trainer;
    if (config.estimator_epochs) est.local_epochs = *config.estimator_epochs;
    if (config.estimator_batch) est.batch_size = *config.estimator_batch;
    if (config.estimator_lr) est.lr_schedule = LrSchedule::constant(*config.estimator_lr);
    fed.estimator_trainer = est;
  }
  return fed;
}

// ---------------------------------------------------------------------------
// Run directory:
//   config.echo          canonical config, seed included
//   rounds.ndrecords     one JSON record per round
//   models/              initial, per-round, final and per-participant models
//   exchange.transcript  one JSON line per participant: noise estimate and exchange
//   metrics.final        final metrics, noise ground truth and contributions

namespace run_files {
inline constexpr const char* kConfig = "config.echo";
inline constexpr const char* kRounds = "rounds.ndrecords";
inline constexpr const char* kModels = "models";
inline constexpr const char* kTranscript = "exchange.transcript";
inline constexpr const char* kMetrics = "metrics.final";
}  // namespace run_files

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out << text;
  require(out.good(), ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

inline std::string round_name(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "round-%04zu.model", t);
  return buf;
}

inline nlohmann::json evaluation_json(const std::optional<Evaluation>& e) {
  if (!e) return nullptr;
  auto j = to_json(e->metrics);
  j["confusion"] = e->confusion.to_json();
  return j;
}

}  // namespace detail

inline std::string records_text(const RunReport& report) {
  std::string out;
  for (const auto& rec : report.records) out += to_json(rec).dump() + "\n";
  return out;
}

inline nlohmann::json final_metrics_json(const ExperimentConfig& config, const PreparedData& data, const RunReport& report,
                                         const std::optional<SmoothnessParams>& smooth) {
  nlohmann::json parts = nlohmann::json::array();
  const auto& last = report.records.back();
  for (std::size_t i = 0; i < report.participants.size(); ++i) {
    const auto& p = report.participants[i];
    nlohmann::json j = {{"name", p.name},
                        {"noisy", data.noisy[i] && data.noise_reports[i].has_value()},
                        {"original_size", p.original_size},
                        {"training_size", p.training_size},
                        {"effective_size", p.effective_size},
                        {"beta", p.beta},
                        {"epsilon", last.epsilon[i]},
                        {"local", detail::evaluation_json(report.final_local.at(i))}};
    if (data.noise_reports[i]) {
      const auto& nr = *data.noise_reports[i];
      std::size_t support = 0;
      for (auto s : nr.class_support) support += s;
      j["injected_ratio"] = support ? static_cast<double>(nr.total_flipped()) / support : 0.0;
      j["injected_class_ratio"] = nr.realized_ratio;
    } else {
      j["injected_ratio"] = 0.0;
    }
    if (p.estimate) j["estimated_beta"] = p.estimate->beta;
    parts.push_back(std::move(j));
  }
  nlohmann::json out = {{"algorithm", report.algorithm},
                        {"seed", *config.seed},
                        {"rounds", report.records.size()},
                        {"global", detail::evaluation_json(report.final_global)},
                        {"server_test_size", report.server_test.size()},
                        {"participants", parts},
                        {"final_model_digest", model_digest(report.final_model)}};
  if (smooth) out["schedule"] = {{"L", smooth->L}, {"mu", smooth->mu}};
  return out;
}

inline std::string transcript_text(const RunReport& report) {
  std::string out;
  for (const auto& p : report.participants) {
    nlohmann::json j = {{"participant", p.name}};
    j["estimate"] = p.estimate ? to_json(*p.estimate) : nlohmann::json(nullptr);
    if (p.exchange) {
      j["exchange"] = to_json(p.exchange->transcript);
      j["reestimate"] = to_json(p.exchange->reestimate);
    } else {
      j["exchange"] = nullptr;
    }
    out += j.dump() + "\n";
  }
  return out;
}

inline RunReport execute(const ExperimentConfig& config, const PreparedData& data,
                         std::optional<SmoothnessParams>* smooth = nullptr) {
  const FederationConfig fed = federation_config(config, data.train, smooth);
  if (config.algorithm == ExperimentConfig::Algorithm::kFedAvg) {
    return run_fedavg(fed, data.train, data.server, data.local_tests);
  }
  return run_fednl(fed, data.train, data.server, data.local_tests);
}

/// Runs the experiment and writes its run directory. An existing non-empty
/// directory is only reused with `overwrite`.
inline RunReport run_experiment(const ExperimentConfig& config, const std::filesystem::path& dir, bool overwrite = false) {
  namespace fs = std::filesystem;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    require(overwrite, ErrorKind::kConfig, "run directory '" + dir.string() + "' exists and is not empty");
    fs::remove_all(dir);
  }
  const PreparedData data = prepare_data(config);
  std::optional<SmoothnessParams> smooth;
  RunReport report = execute(config, data, &smooth);

  fs::create_directories(dir / run_files::kModels);
  detail::write_text(dir / run_files::kConfig, echo_config(config));
  detail::write_text(dir / run_files::kRounds, records_text(report));
  detail::write_text(dir / run_files::kTranscript, transcript_text(report));
  detail::write_text(dir / run_files::kMetrics, final_metrics_json(config, data, report, smooth).dump(2) + "\n");
  const auto models = dir / run_files::kModels;
  save_model((models / "initial.model").string(), report.initial_model);
  for (std::size_t t = 0; t < report.round_models.size(); ++t) {
    save_model((models / detail::round_name(t + 1)).string(), report.round_models[t]);
  }
  save_model((models / "final.model").string(), report.final_model);
  for (std::size_t i = 0; i < report.participant_models.size(); ++i) {
    save_model((models / (report.participants[i].name + ".model")).string(), report.participant_models[i]);
  }
  return report;
}

inline std::vector<RoundRecord> load_records(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), ErrorKind::kNotFound, "no run directory '" + dir.string() + "'");
  const auto path = dir / run_files::kRounds;
  std::ifstream in(path);
  require(in.good(), ErrorKind::kNotFound, "missing '" + path.string() + "'");
  std::vector<RoundRecord> records;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++index;
    try {
      records.push_back(round_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kReport, "record " + std::to_string(index) + " of '" + path.string() + "' is corrupt: " + e.what());
    }
  }
  return records;
}

inline nlohmann::json load_final_metrics(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), ErrorKind::kNotFound, "no run directory '" + dir.string() + "'");
  const auto path = dir / run_files::kMetrics;
  std::ifstream in(path);
  require(in.good(), ErrorKind::kNotFound, "missing '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kReport, "'" + path.string() + "' is corrupt: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Rounds grid

struct MeasuredConstants {
  SmoothnessParams smooth;
  BComponents components;
  std::vector<double> epsilon;
  double init_gap = 0.0;
};

struct RoundsRow {
  std::string noise;
  int local_epochs = 1;
  double q_o = 0.0;
  std::optional<MeasuredConstants> constants;
  BBreakdown b;
  RoundEstimate estimate;
  std::string error;
};

/// Gradient bounds are measured at `reference` for every participant; w*
/// and L* come from the pooled training data.
inline MeasuredConstants measure_constants(std::span<const Dataset> train, const ModelParams& reference,
                                           const ExperimentConfig& config, std::uint64_t seed) {
  MeasuredConstants m;
  const TrainerConfig& tc = config.federation.trainer;
  const Dataset pooled = pool_datasets(train);
  m.smooth = measure_smoothness(TrainingView(pooled), tc, derive_seed(seed, "smoothness"), config.smoothness_pairs);
  std::vector<std::size_t> sizes;
  for (const auto& d : train) sizes.push_back(TrainingView(d).size());
  m.epsilon = size_weights(sizes).epsilon;
  const std::vector<ModelParams> models(train.size(), reference);
  m.components = measure_b_components(train, models, m.epsilon, tc, derive_seed(seed, "b_components"), config.b_batches);
  m.init_gap = measure_init_gap(m.components.pooled_optimum, config.federation.init_range, derive_seed(seed, "server_init"),
                                config.init_draws);
  return m;
}

/// One row per (noise level, E, q_o). Measurement failures are reported in
/// the rows of their noise level; the rest of the grid still runs.
inline std::vector<RoundsRow> rounds_grid(const ExperimentConfig& config) {
  require(!config.q_o.empty(), ErrorKind::kConfig, "rounds.q_o: the grid is empty");
  require(!config.epochs.empty(), ErrorKind::kConfig, "rounds.epochs: the grid is empty");
  PreparedData data = prepare_data(config);
  const std::uint64_t seed = *config.seed;
  const double l2 = config.federation.trainer.l2_lambda;
  // The server's noise-free data gives the reference model.
  const Dataset reference_data = data.server.empty() ? pool_datasets(data.clean_train) : data.server;
  std::optional<ModelParams> reference;
  std::string reference_error;
  try {
    reference = checked_optimum(TrainingView(reference_data), l2, "reference").model;
  } catch (const Error& e) {
    reference_error = e.what();
  }

  std::vector<std::pair<std::string, std::optional<double>>> levels;
  if (config.noise_levels.empty()) {
    levels.emplace_back("config", std::nullopt);
  } else {
    for (double b : config.noise_levels) levels.emplace_back(detail::real_text(b), b);
  }
  std::vector<RoundsRow> rows;
  for (const auto& [label, beta] : levels) {
    std::optional<MeasuredConstants> constants;
    std::string error = reference_error;
    if (reference) {
      try {
        if (beta) inject_participants(data, config, beta);
        constants = measure_constants(data.train, *reference, config, seed);
      } catch (const Error& e) {
        error = e.what();
      }
    }
    for (int e : config.epochs) {
      for (double q : config.q_o) {
        RoundsRow row;
        row.noise = label;
        row.local_epochs = e;
        row.q_o = q;
        row.error = error;
        if (constants) {
          try {
            const auto& c = constants->components;
            row.b = compute_B(constants->epsilon, c.sigma_sq, constants->smooth.L, c.Gamma, e, c.G_sq);
            row.estimate = estimate_rounds(constants->smooth, RoundParams{e, q, row.b.total, constants->init_gap,
                                                                          config.alpha_minus_one});
            row.constants = constants;
          } catch (const Error& err) {
            row.error = err.what();
          }
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

}  // namespace fednl
