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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fednl/engine.hpp"
#include "fednl/error.hpp"
#include "fednl/experiment.hpp"

namespace fednl {

/// Rows of cells rendered either as aligned text or tab-separated columns.
struct Table {
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string text() const {
    std::vector<std::size_t> width(header.size(), 0);
    auto widen = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
    };
    widen(header);
    for (const auto& r : rows) widen(r);
    auto line = [&](const std::vector<std::string>& r) {
      std::string out;
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) out += "  ";
        out += r[i] + std::string(i + 1 < r.size() ? width[i] - r[i].size() : 0, ' ');
      }
      return out + "\n";
    };
    std::string out = title.empty() ? "" : title + "\n";
    out += line(header);
    std::size_t total = 0;
    for (auto w : width) total += w;
    out += std::string(total + 2 * (width.empty() ? 0 : width.size() - 1), '-') + "\n";
    for (const auto& r : rows) out += line(r);
    return out;
  }

  std::string tsv() const {
    auto line = [](const std::vector<std::string>& r) {
      std::string out;
      for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "\t" : "") + r[i];
      return out + "\n";
    };
    std::string out = line(header);
    for (const auto& r : rows) out += line(r);
    return out;
  }
};

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string general(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct RunView {
  std::filesystem::path dir;
  std::vector<RoundRecord> records;
  nlohmann::json metrics;
};

inline RunView load_run(const std::filesystem::path& dir) {
  RunView run;
  run.dir = dir;
  run.records = load_records(dir);
  run.metrics = load_final_metrics(dir);
  return run;
}

inline Table rounds_table(const RunView& run) {
  Table t{"per-round", {"round", "steps", "global_acc", "global_f1", "aggregate_loss", "server_test_loss"}, {}};
  const std::size_t n = run.records.empty() ? 0 : run.records[0].epsilon.size();
  for (std::size_t i = 0; i < n; ++i) t.header.push_back("eps_" + std::to_string(i));
  for (const auto& r : run.records) {
    std::vector<std::string> row{std::to_string(r.round), std::to_string(r.steps), fixed(r.global_accuracy),
                                 fixed(r.global_macro_f1), general(r.aggregate_loss), general(r.server_test_loss)};
    for (double e : r.epsilon) row.push_back(fixed(e));
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Local and global metrics per participant, ordered by injected noise.
inline Table final_table(const RunView& run) {
  Table t{"final", {"scope", "injected_beta", "estimated_beta", "epsilon", "accuracy", "macro_f1"}, {}};
  const auto& g = run.metrics.at("global");
  if (!g.is_null()) {
    t.rows.push_back({"global", "-", "-", "-", fixed(g.at("accuracy").get<double>()), fixed(g.at("macro_f1").get<double>())});
  }
  std::vector<nlohmann::json> parts(run.metrics.at("participants").begin(), run.metrics.at("participants").end());
  std::stable_sort(parts.begin(), parts.end(), [](const auto& a, const auto& b) {
    return a.at("injected_ratio").template get<double>() < b.at("injected_ratio").template get<double>();
  });
  for (const auto& p : parts) {
    const auto& local = p.at("local");
    t.rows.push_back({p.at("name").get<std::string>(), fixed(p.at("injected_ratio").get<double>()),
                      p.contains("estimated_beta") ? fixed(p.at("estimated_beta").get<double>()) : "-",
                      fixed(p.at("epsilon").get<double>()),
                      local.is_null() ? "-" : fixed(local.at("accuracy").get<double>()),
                      local.is_null() ? "-" : fixed(local.at("macro_f1").get<double>())});
  }
  return t;
}

inline std::optional<Table> confusion_table(const RunView& run) {
  const auto& g = run.metrics.at("global");
  if (g.is_null()) return std::nullopt;
  const auto& cm = g.at("confusion");
  Table t{"global confusion (rows true, columns predicted)", {"true"}, {}};
  for (std::size_t k = 0; k < cm.size(); ++k) t.header.push_back(std::to_string(k));
  for (std::size_t k = 0; k < cm.size(); ++k) {
    std::vector<std::string> row{std::to_string(k)};
    for (const auto& v : cm[k]) row.push_back(std::to_string(v.get<std::size_t>()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Mean epsilon of noisy participants over mean epsilon of clean ones, per round.
inline std::optional<Table> contribution_table(const RunView& run) {
  std::vector<bool> noisy;
  for (const auto& p : run.metrics.at("participants")) noisy.push_back(p.at("noisy").get<bool>());
  const auto noisy_count = static_cast<std::size_t>(std::count(noisy.begin(), noisy.end(), true));
  if (noisy_count == 0 || noisy_count == noisy.size()) return std::nullopt;
  Table t{"contribution ratio (noisy / clean)", {"round", "eps_noisy", "eps_clean", "ratio"}, {}};
  for (const auto& r : run.records) {
    require(r.epsilon.size() == noisy.size(), ErrorKind::kReport,
            "record " + std::to_string(r.round) + " has " + std::to_string(r.epsilon.size()) + " weights");
    double a = 0.0;
    double b = 0.0;
    for (std::size_t i = 0; i < noisy.size(); ++i) (noisy[i] ? a : b) += r.epsilon[i];
    a /= static_cast<double>(noisy_count);
    b /= static_cast<double>(noisy.size() - noisy_count);
    t.rows.push_back({std::to_string(r.round), fixed(a, 6), fixed(b, 6), fixed(contribution_ratio(a, b), 6)});
  }
  return t;
}

inline Table accuracy_series(const RunView& run) {
  Table t{"global accuracy by round", {"round", "accuracy", "macro_f1"}, {}};
  for (const auto& r : run.records) {
    t.rows.push_back({std::to_string(r.round), fixed(r.global_accuracy, 6), fixed(r.global_macro_f1, 6)});
  }
  return t;
}

inline Table compare_table(const RunView& a, const RunView& b) {
  const std::string na = a.metrics.at("algorithm").get<std::string>();
  const std::string nb = b.metrics.at("algorithm").get<std::string>();
  Table t{"comparison " + na + " vs " + nb,
          {"round", "acc_" + na, "acc_" + nb, "delta_acc", "loss_" + na, "loss_" + nb, "delta_loss"},
          {}};
  const std::size_t n = std::min(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ra = a.records[i];
    const auto& rb = b.records[i];
    t.rows.push_back({std::to_string(ra.round), fixed(ra.global_accuracy), fixed(rb.global_accuracy),
                      fixed(ra.global_accuracy - rb.global_accuracy), general(ra.server_test_loss),
                      general(rb.server_test_loss), general(ra.server_test_loss - rb.server_test_loss)});
  }
  return t;
}

/// Renders every table of a run as text and writes each as a column file
/// into `out_dir`.
inline std::string render_report(const RunView& run, const std::filesystem::path& out_dir,
                                 const std::optional<RunView>& other = std::nullopt) {
  std::vector<std::pair<std::string, Table>> tables;
  tables.emplace_back("final.tsv", final_table(run));
  tables.emplace_back("rounds.tsv", rounds_table(run));
  tables.emplace_back("accuracy.tsv", accuracy_series(run));
  if (auto t = confusion_table(run)) tables.emplace_back("confusion.tsv", *t);
  if (auto t = contribution_table(run)) tables.emplace_back("contribution_ratio.tsv", *t);
  if (other) tables.emplace_back("compare.tsv", compare_table(run, *other));

  std::filesystem::create_directories(out_dir);
  std::string text;
  for (const auto& [file, table] : tables) {
    text += table.text() + "\n";
    detail::write_text(out_dir / file, table.tsv());
  }
  return text;
}

inline Table rounds_grid_table(const std::vector<RoundsRow>& rows) {
  Table t{"rounds estimate",
          {"noise", "E", "q_o", "L", "mu", "sigma_sq_max", "G_sq", "Gamma", "B_variance", "B_heterogeneity", "B_drift",
           "B", "init_gap", "alpha", "R_raw", "R", "error"},
          {}};
  for (const auto& r : rows) {
    std::vector<std::string> row{r.noise, std::to_string(r.local_epochs), general(r.q_o)};
    if (r.constants) {
      const auto& c = *r.constants;
      const double sigma = c.components.sigma_sq.empty()
                               ? 0.0
                               : *std::max_element(c.components.sigma_sq.begin(), c.components.sigma_sq.end());
      for (double v : {c.smooth.L, c.smooth.mu, sigma, c.components.G_sq, c.components.Gamma, r.b.variance,
                       r.b.heterogeneity, r.b.drift, r.b.total, c.init_gap, r.estimate.alpha, r.estimate.raw}) {
        row.push_back(general(v));
      }
      row.push_back(std::to_string(r.estimate.rounds));
      row.push_back(r.error.empty() ? "-" : r.error);
    } else {
      row.insert(row.end(), 13, "-");
      row.push_back(r.error);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace fednl
