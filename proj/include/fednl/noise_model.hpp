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

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fednl/dataset.hpp"
#include "fednl/error.hpp"
#include "fednl/random.hpp"

namespace fednl {

/// Row-stochastic label-corruption law. Row k is the distribution of the
/// observed label given true class k; an optional trailing column carries
/// mass for out-of-space annotations.
class TransitionMatrix {
 public:
  TransitionMatrix() = default;

  TransitionMatrix(int classes, Eigen::MatrixXd rows) : classes_(classes), rows_(std::move(rows)) {
    require(classes_ >= 2, ErrorKind::kDomain, "transition matrix needs at least 2 classes");
    require(rows_.rows() == classes_ && (rows_.cols() == classes_ || rows_.cols() == classes_ + 1), ErrorKind::kNoiseMatrix,
            "transition matrix must be c x c or c x (c+1)");
    for (Eigen::Index k = 0; k < rows_.rows(); ++k) {
      require((rows_.row(k).array() >= 0.0).all() && rows_.row(k).allFinite(), ErrorKind::kNoiseMatrix,
              "transition row " + std::to_string(k) + " has a negative or non-finite entry");
      require(std::abs(rows_.row(k).sum() - 1.0) <= 1e-12, ErrorKind::kNoiseMatrix,
              "transition row " + std::to_string(k) + " does not sum to 1");
    }
  }

  static TransitionMatrix identity(int classes) {
    return TransitionMatrix(classes, Eigen::MatrixXd::Identity(classes, classes));
  }

  int classes() const { return classes_; }
  bool has_out_of_space() const { return rows_.cols() == classes_ + 1; }
  double operator()(int from, int to) const { return rows_(from, to); }
  const Eigen::MatrixXd& rows() const { return rows_; }

  /// True when every diagonal entry strictly exceeds the rest of its row.
  bool diagonally_dominant() const {
    for (int k = 0; k < classes_; ++k) {
      for (Eigen::Index l = 0; l < rows_.cols(); ++l) {
        if (l != k && rows_(k, k) <= rows_(k, l)) return false;
      }
    }
    return true;
  }

 private:
  int classes_ = 0;
  Eigen::MatrixXd rows_;
};

/// P_kk = 1 - beta and P_kl = beta / (c - 1).
inline TransitionMatrix symmetric_matrix(int classes, double beta) {
  require(classes >= 2, ErrorKind::kDomain, "symmetric noise needs at least 2 classes");
  require(beta >= 0.0 && beta < 1.0, ErrorKind::kDomain, "noise ratio must lie in [0, 1)");
  Eigen::MatrixXd p = Eigen::MatrixXd::Constant(classes, classes, beta / (classes - 1));
  p.diagonal().setConstant(1.0 - beta);
  return TransitionMatrix(classes, std::move(p));
}

struct NoisePair {
  int src = 0;
  int dst = 0;
  double mass = 0.0;
};

/// Structured corruption: each listed pair moves `mass` from the source
/// class to the destination; every source keeps at least half its mass.
inline TransitionMatrix asymmetric_matrix(int classes, const std::vector<NoisePair>& pairs) {
  require(classes >= 2, ErrorKind::kDomain, "asymmetric noise needs at least 2 classes");
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(classes, classes);
  std::set<std::pair<int, int>> seen;
  std::vector<double> outgoing(classes, 0.0);
  for (const auto& pair : pairs) {
    require(pair.src >= 0 && pair.src < classes && pair.dst >= 0 && pair.dst < classes, ErrorKind::kNoiseMatrix,
            "noise pair references a class outside [0," + std::to_string(classes) + ")");
    require(pair.src != pair.dst, ErrorKind::kNoiseMatrix, "noise pair source equals destination");
    require(pair.mass >= 0.0 && std::isfinite(pair.mass), ErrorKind::kNoiseMatrix, "noise pair mass must be non-negative");
    require(seen.insert({pair.src, pair.dst}).second, ErrorKind::kNoiseMatrix,
            "duplicate noise pair (" + std::to_string(pair.src) + "," + std::to_string(pair.dst) + ")");
    p(pair.src, pair.dst) = pair.mass;
    outgoing[pair.src] += pair.mass;
  }
  for (int k = 0; k < classes; ++k) {
    require(outgoing[k] < 0.5, ErrorKind::kDominance,
            "class " + std::to_string(k) + " loses mass " + std::to_string(outgoing[k]) + " >= 0.5");
    p(k, k) = 1.0 - outgoing[k];
  }
  return TransitionMatrix(classes, std::move(p));
}

/// Moves `mass` of every row's diagonal into an appended out-of-space column.
inline TransitionMatrix with_out_of_space(const TransitionMatrix& base, double mass) {
  require(!base.has_out_of_space(), ErrorKind::kNoiseMatrix, "matrix already has an out-of-space column");
  const int c = base.classes();
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(c, c + 1);
  p.leftCols(c) = base.rows();
  for (int k = 0; k < c; ++k) {
    require(mass >= 0.0 && mass <= p(k, k), ErrorKind::kDomain, "out-of-space mass exceeds diagonal mass");
    p(k, k) -= mass;
    p(k, c) = mass;
  }
  return TransitionMatrix(c, std::move(p));
}

struct NoiseReport {
  std::uint64_t seed = 0;
  /// Flipped labels per pre-injection class.
  std::vector<std::size_t> injected_count;
  std::vector<std::size_t> class_support;
  std::vector<double> realized_ratio;
  /// transitions(k, l): instances of class k that ended up labelled l
  /// (column c counts out-of-space labels).
  Eigen::MatrixXi transitions;
  std::unordered_set<InstanceId> flipped_ids;

  std::size_t total_flipped() const { return flipped_ids.size(); }
};

/// Resamples each observed label from its transition row with one
/// categorical draw per instance, in dataset order.
inline std::pair<Dataset, NoiseReport> inject_noise(const Dataset& ds, const TransitionMatrix& p, std::uint64_t seed) {
  require(ds.class_count == p.classes(), ErrorKind::kSchema, "dataset and transition matrix class counts differ");
  const int c = ds.class_count;
  NoiseReport report;
  report.seed = seed;
  report.injected_count.assign(c, 0);
  report.class_support.assign(c, 0);
  report.realized_ratio.assign(c, 0.0);
  report.transitions = Eigen::MatrixXi::Zero(c, c + 1);

  Rng rng(derive_seed(seed, "inject_noise"));
  Dataset out = ds;
  std::vector<double> row(static_cast<std::size_t>(p.rows().cols()));
  for (std::size_t j = 0; j < out.instances.size(); ++j) {
    auto& inst = out.instances[j];
    const ClassId y = inst.observed_label;
    require(y >= 0 && y < c, ErrorKind::kSchema, "instance " + std::to_string(j) + " has an out-of-space label");
    if (!inst.true_label) inst.true_label = y;
    for (std::size_t l = 0; l < row.size(); ++l) row[l] = p(y, static_cast<int>(l));
    const auto drawn = static_cast<int>(rng.categorical(row));
    inst.observed_label = drawn == c ? kOutOfSpace : drawn;
    ++report.class_support[y];
    ++report.transitions(y, drawn);
    if (inst.observed_label != y) {
      ++report.injected_count[y];
      report.flipped_ids.insert(inst.id);
    }
  }
  for (int k = 0; k < c; ++k) {
    report.realized_ratio[k] = report.class_support[k] == 0
                                   ? 0.0
                                   : static_cast<double>(report.injected_count[k]) / report.class_support[k];
  }
  return {std::move(out), std::move(report)};
}

// ---------------------------------------------------------------------------
// Text format:
//   fednl-transition-matrix 1
//   classes <c>
//   out_of_space <0|1>
//   <row 0 entries>
//   ...

inline void write_transition_matrix(std::ostream& out, const TransitionMatrix& p) {
  out << "fednl-transition-matrix 1\n";
  out << "classes " << p.classes() << '\n';
  out << "out_of_space " << (p.has_out_of_space() ? 1 : 0) << '\n';
  out << std::setprecision(17);
  for (Eigen::Index k = 0; k < p.rows().rows(); ++k) {
    for (Eigen::Index l = 0; l < p.rows().cols(); ++l) out << (l ? " " : "") << p.rows()(k, l);
    out << '\n';
  }
}

inline TransitionMatrix read_transition_matrix(std::istream& in) {
  std::string magic;
  int version = 0;
  std::string key;
  int classes = 0;
  int oos = 0;
  in >> magic >> version;
  require(in && magic == "fednl-transition-matrix" && version == 1, ErrorKind::kParse,
          "not a version-1 transition matrix file");
  in >> key >> classes;
  require(in && key == "classes" && classes >= 2, ErrorKind::kParse, "bad 'classes' line");
  in >> key >> oos;
  require(in && key == "out_of_space" && (oos == 0 || oos == 1), ErrorKind::kParse, "bad 'out_of_space' line");
  Eigen::MatrixXd rows(classes, classes + oos);
  for (Eigen::Index k = 0; k < rows.rows(); ++k) {
    for (Eigen::Index l = 0; l < rows.cols(); ++l) {
      require(static_cast<bool>(in >> rows(k, l)), ErrorKind::kParse, "truncated transition matrix");
    }
  }
  return TransitionMatrix(classes, std::move(rows));
}

inline void save_transition_matrix(const std::string& path, const TransitionMatrix& p) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write '" + path + "'");
  write_transition_matrix(out, p);
}

inline TransitionMatrix load_transition_matrix(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kNotFound, "cannot open '" + path + "'");
  return read_transition_matrix(in);
}

}  // namespace fednl
