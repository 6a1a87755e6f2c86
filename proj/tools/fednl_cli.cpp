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
// fednl_cli: synth, inject, estimate, run, rounds, report.
//
// Exit codes: 0 success, 2 usage or validation error, 3 runtime error.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "fednl/fednl.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 2;
constexpr int kRuntime = 3;

/// Runs `validate` then `execute`, mapping failures of each to an exit code.
int staged(const std::function<void()>& validate, const std::function<void()>& execute) {
  try {
    validate();
  } catch (const std::exception& e) {
    std::cerr << "fednl: " << e.what() << "\n";
    return kInvalid;
  }
  try {
    execute();
  } catch (const std::exception& e) {
    std::cerr << "fednl: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

void check_writable(const std::string& path, bool force) {
  fednl::require(force || !fs::exists(path), fednl::ErrorKind::kConfig,
                 "'" + path + "' exists; pass --force to overwrite");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning with noisy labels: simulator and round estimator"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  bool force = false;
  std::string out;
  std::string config_path;
  std::string data_path;

  auto* synth = app.add_subcommand("synth", "write a synthetic Gaussian-blob dataset");
  int classes = 3, per_class = 200, dim = 2;
  double sep = 8.0;
  synth->add_option("--classes", classes, "class count")->check(CLI::Range(2, 1 << 20));
  synth->add_option("--per-class", per_class, "instances per class")->check(CLI::PositiveNumber);
  synth->add_option("--dim", dim, "feature dimension")->check(CLI::PositiveNumber);
  synth->add_option("--sep", sep, "minimum distance between class means")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "seed")->required();
  synth->add_option("--out", out, "output file")->required();
  synth->add_flag("--force", force, "overwrite an existing file");

  auto* inject = app.add_subcommand("inject", "inject label noise into a dataset file");
  std::optional<double> symmetric;
  std::string pairs, matrix, report_path;
  double oos = 0.0;
  inject->add_option("--data", data_path, "input dataset")->required()->check(CLI::ExistingFile);
  inject->add_option("--seed", seed, "seed")->required();
  inject->add_option("--out", out, "noisy dataset output")->required();
  auto* sym_opt = inject->add_option("--symmetric", symmetric, "symmetric noise ratio");
  auto* pairs_opt = inject->add_option("--pairs", pairs, "asymmetric flips src>dst:mass,...");
  auto* matrix_opt = inject->add_option("--matrix", matrix, "transition matrix file")->check(CLI::ExistingFile);
  sym_opt->excludes(pairs_opt)->excludes(matrix_opt);
  pairs_opt->excludes(matrix_opt);
  inject->add_option("--out-of-space", oos, "mass moved to the out-of-space label");
  inject->add_option("--report", report_path, "write the noise report here");
  inject->add_flag("--force", force, "overwrite an existing file");

  auto* estimate = app.add_subcommand("estimate", "estimate per-class noise ratios of a dataset");
  fednl::TrainerConfig trainer;
  double lr = 0.05;
  bool resplit = false;
  estimate->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);
  estimate->add_option("--seed", seed, "seed")->required();
  estimate->add_option("--epochs", trainer.local_epochs, "training epochs per fold")->check(CLI::PositiveNumber);
  estimate->add_option("--batch", trainer.batch_size, "mini-batch size")->check(CLI::PositiveNumber);
  estimate->add_option("--lr", lr, "learning rate")->check(CLI::PositiveNumber);
  estimate->add_option("--l2", trainer.l2_lambda, "L2 coefficient")->check(CLI::NonNegativeNumber);
  estimate->add_flag("--per-class-resplit", resplit, "split each class into folds separately");
  estimate->add_option("--out", out, "write the estimate as JSON here");

  auto* run = app.add_subcommand("run", "run an experiment and write its run directory");
  run->add_option("--config", config_path, "experiment config")->required();
  run->add_option("--seed", seed, "master seed")->required();
  run->add_option("--out", out, "run directory (default: output root / output.name)");
  run->add_flag("--force", force, "replace an existing run directory");
  run->footer("The output root can also come from $" + std::string(fednl::kOutputRootEnv) + ".");

  auto* rounds = app.add_subcommand("rounds", "estimate communication rounds from measured constants");
  rounds->add_option("--config", config_path, "experiment config")->required();
  rounds->add_option("--seed", seed, "master seed")->required();
  rounds->add_option("--out", out, "directory for rounds.table (default: output root / output.name)");

  auto* report = app.add_subcommand("report", "render the tables of a run directory");
  std::string run_dir, compare_dir;
  report->add_option("run", run_dir, "run directory")->required();
  report->add_option("--compare", compare_dir, "second run directory for a per-round comparison");
  report->add_option("--out", out, "directory for column files (default: <run>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  if (synth->parsed()) {
    return staged([&] { check_writable(out, force); },
                  [&] { fednl::save_dataset(out, fednl::synth_gaussian(classes, per_class, dim, sep, seed)); });
  }

  if (inject->parsed()) {
    fednl::Dataset data;
    fednl::TransitionMatrix p = fednl::TransitionMatrix::identity(2);
    return staged(
        [&] {
          check_writable(out, force);
          fednl::require(symmetric || !pairs.empty() || !matrix.empty(), fednl::ErrorKind::kConfig,
                         "one of --symmetric, --pairs or --matrix is required");
          data = fednl::load_dataset(data_path);
          if (symmetric) {
            p = fednl::symmetric_matrix(data.class_count, *symmetric);
          } else if (!pairs.empty()) {
            p = fednl::asymmetric_matrix(data.class_count, fednl::detail::parse_pairs(pairs));
          } else {
            p = fednl::load_transition_matrix(matrix);
          }
          if (oos > 0.0) p = fednl::with_out_of_space(p, oos);
        },
        [&] {
          auto [noisy, nr] = fednl::inject_noise(data, p, seed);
          fednl::save_dataset(out, noisy);
          nlohmann::json j = {{"seed", seed},
                              {"injected_count", nr.injected_count},
                              {"class_support", nr.class_support},
                              {"realized_ratio", nr.realized_ratio},
                              {"flipped", nr.total_flipped()}};
          if (!report_path.empty()) {
            std::ofstream f(report_path);
            f << j.dump(2) << "\n";
          }
          std::cout << j.dump(2) << "\n";
        });
  }

  if (estimate->parsed()) {
    fednl::Dataset data;
    return staged(
        [&] {
          trainer.lr_schedule = fednl::LrSchedule::constant(lr);
          fednl::validate(trainer);
          data = fednl::load_dataset(data_path);
        },
        [&] {
          const auto est = fednl::estimate_noise(data, trainer, seed, fednl::EstimatorOptions{resplit});
          nlohmann::json j = fednl::to_json(est);
          j["removed_ids"] = est.all_removed();
          const std::string text = j.dump(2) + "\n";
          if (!out.empty()) {
            std::ofstream f(out);
            f << text;
          }
          std::cout << text;
        });
  }

  if (run->parsed()) {
    fednl::ExperimentConfig config;
    fs::path dir;
    return staged(
        [&] {
          config = fednl::load_config(config_path, seed);
          dir = out.empty() ? fednl::default_run_dir(config) : fs::path(out);
          fednl::require(force || !fs::exists(dir) || fs::is_empty(dir), fednl::ErrorKind::kConfig,
                         "run directory '" + dir.string() + "' exists; pass --force to replace it");
        },
        [&] {
          const auto result = fednl::run_experiment(config, dir, force);
          const auto& last = result.records.back();
          std::cout << result.algorithm << ": " << result.records.size() << " rounds, global accuracy "
                    << fednl::fixed(last.global_accuracy) << ", run directory " << dir.string() << "\n";
        });
  }

  if (rounds->parsed()) {
    fednl::ExperimentConfig config;
    fs::path dir;
    return staged(
        [&] {
          config = fednl::load_config(config_path, seed);
          fednl::require(!config.q_o.empty() && !config.epochs.empty(), fednl::ErrorKind::kConfig,
                         "rounds.q_o and rounds.epochs must both be non-empty");
          dir = out.empty() ? fednl::default_run_dir(config) : fs::path(out);
        },
        [&] {
          const auto table = fednl::rounds_grid_table(fednl::rounds_grid(config));
          fs::create_directories(dir);
          fednl::detail::write_text(dir / "rounds.table", table.tsv());
          std::cout << table.text();
        });
  }

  if (report->parsed()) {
    return staged(
        [&] {
          fednl::require(fs::is_directory(run_dir), fednl::ErrorKind::kNotFound, "no run directory '" + run_dir + "'");
          fednl::require(compare_dir.empty() || fs::is_directory(compare_dir), fednl::ErrorKind::kNotFound,
                         "no run directory '" + compare_dir + "'");
        },
        [&] {
          const auto view = fednl::load_run(run_dir);
          std::optional<fednl::RunView> other;
          if (!compare_dir.empty()) other = fednl::load_run(compare_dir);
          const fs::path dest = out.empty() ? fs::path(run_dir) / "report" : fs::path(out);
          std::cout << fednl::render_report(view, dest, other);
        });
  }
  return kOk;
}
