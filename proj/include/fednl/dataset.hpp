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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "fednl/error.hpp"
#include "fednl/random.hpp"

namespace fednl {

using InstanceId = std::uint64_t;
using ClassId = int;

/// Observed label of an instance whose annotation falls outside the class space.
inline constexpr ClassId kOutOfSpace = -1;

struct Instance {
  InstanceId id = 0;
  std::vector<double> features;
  ClassId observed_label = 0;
  // Ground truth for evaluation only. Training and estimation read instances
  // through TrainingView, which never exposes this field.
  std::optional<ClassId> true_label;
};

struct Dataset {
  std::string name;
  int class_count = 0;
  int dim = 0;
  std::vector<Instance> instances;

  std::size_t size() const { return instances.size(); }
  bool empty() const { return instances.empty(); }

  /// Returns an empty dataset with the same name, class space and dimensionality.
  Dataset like(std::string new_name = {}) const {
    Dataset out;
    out.name = new_name.empty() ? name : std::move(new_name);
    out.class_count = class_count;
    out.dim = dim;
    return out;
  }

  std::vector<InstanceId> ids() const {
    std::vector<InstanceId> out;
    out.reserve(instances.size());
    for (const auto& inst : instances) out.push_back(inst.id);
    return out;
  }

  /// Number of instances whose observed label is k.
  std::vector<std::size_t> class_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(class_count), 0);
    for (const auto& inst : instances) {
      if (inst.observed_label >= 0 && inst.observed_label < class_count) ++sizes[inst.observed_label];
    }
    return sizes;
  }

  bool has_true_labels() const {
    return std::all_of(instances.begin(), instances.end(),
                       [](const Instance& inst) { return inst.true_label.has_value(); });
  }
};

/// Throws kSchema if any instance violates the dataset's declared shape.
inline void validate(const Dataset& ds, bool allow_out_of_space = true) {
  require(ds.class_count >= 1, ErrorKind::kSchema, "class_count must be positive");
  for (std::size_t j = 0; j < ds.instances.size(); ++j) {
    const auto& inst = ds.instances[j];
    require(inst.features.size() == static_cast<std::size_t>(ds.dim), ErrorKind::kSchema,
            "instance " + std::to_string(j) + " has dimensionality " + std::to_string(inst.features.size()) +
                ", expected " + std::to_string(ds.dim));
    const bool in_space = inst.observed_label >= 0 && inst.observed_label < ds.class_count;
    require(in_space || (allow_out_of_space && inst.observed_label == kOutOfSpace), ErrorKind::kSchema,
            "instance " + std::to_string(j) + " has label " + std::to_string(inst.observed_label) +
                " outside [0," + std::to_string(ds.class_count) + ")");
    if (inst.true_label) {
      require(*inst.true_label >= 0 && *inst.true_label < ds.class_count, ErrorKind::kSchema,
              "instance " + std::to_string(j) + " has true label outside class space");
    }
  }
}

// ---------------------------------------------------------------------------
// Training view

/// Label-only view over the in-space instances of a dataset: features are
/// packed into a design matrix with a trailing constant-1 bias column.
/// Out-of-space instances are dropped since they carry no usable target.
class TrainingView {
 public:
  TrainingView() = default;

  explicit TrainingView(const Dataset& ds) : class_count_(ds.class_count), dim_(ds.dim) {
    std::size_t n = 0;
    for (const auto& inst : ds.instances) {
      if (inst.observed_label != kOutOfSpace) ++n;
    }
    design_.resize(static_cast<Eigen::Index>(n), dim_ + 1);
    labels_.reserve(n);
    ids_.reserve(n);
    Eigen::Index row = 0;
    for (const auto& inst : ds.instances) {
      if (inst.observed_label == kOutOfSpace) continue;
      for (int f = 0; f < dim_; ++f) design_(row, f) = inst.features[f];
      design_(row, dim_) = 1.0;
      labels_.push_back(inst.observed_label);
      ids_.push_back(inst.id);
      ++row;
    }
  }

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  int class_count() const { return class_count_; }
  int dim() const { return dim_; }

  const Eigen::MatrixXd& design() const { return design_; }
  std::span<const ClassId> labels() const { return labels_; }
  std::span<const InstanceId> ids() const { return ids_; }

 private:
  int class_count_ = 0;
  int dim_ = 0;
  Eigen::MatrixXd design_;
  std::vector<ClassId> labels_;
  std::vector<InstanceId> ids_;
};

// ---------------------------------------------------------------------------
// File format: delimited text, header `f0..f{d-1},label[,true_label]`.

struct DatasetSchema {
  char delimiter = ',';
  /// 0 infers c as max observed/true label + 1.
  int class_count = 0;
  bool allow_out_of_space = false;
  std::string name = "dataset";
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, delim)) out.push_back(cell);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  char* end = nullptr;
  out = std::strtod(text.c_str(), &end);
  return end == text.c_str() + text.size() && std::isfinite(out);
}

inline bool parse_label(const std::string& text, long& out) {
  if (text.empty()) return false;
  char* end = nullptr;
  out = std::strtol(text.c_str(), &end, 10);
  return end == text.c_str() + text.size();
}

}  // namespace detail

/// Parses a dataset from a stream. Row numbers in errors are 1-based data rows.
inline Dataset read_dataset(std::istream& in, const DatasetSchema& schema = {}) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::kParse, "missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_line(line, schema.delimiter);

  int dim = 0;
  while (dim < static_cast<int>(header.size()) && detail::trim(header[dim]) == "f" + std::to_string(dim)) ++dim;
  require(dim < static_cast<int>(header.size()) && detail::trim(header[dim]) == "label", ErrorKind::kParse,
          "header must be f0..f{d-1},label[,true_label]");
  const bool has_true = header.size() == static_cast<std::size_t>(dim) + 2;
  require(header.size() == static_cast<std::size_t>(dim) + 1 ||
              (has_true && detail::trim(header[dim + 1]) == "true_label"),
          ErrorKind::kParse, "unexpected trailing header columns");

  Dataset ds;
  ds.name = schema.name;
  ds.dim = dim;
  const std::size_t arity = header.size();
  long max_label = -1;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_line(line, schema.delimiter);
    require(cells.size() == arity, ErrorKind::kParse,
            "row " + std::to_string(row) + ": expected " + std::to_string(arity) + " columns, got " +
                std::to_string(cells.size()));
    Instance inst;
    inst.id = row - 1;
    inst.features.resize(dim);
    for (int f = 0; f < dim; ++f) {
      require(detail::parse_double(detail::trim(cells[f]), inst.features[f]), ErrorKind::kParse,
              "row " + std::to_string(row) + ": non-numeric feature f" + std::to_string(f));
    }
    long label = 0;
    require(detail::parse_label(detail::trim(cells[dim]), label), ErrorKind::kParse,
            "row " + std::to_string(row) + ": non-integer label");
    if (label == kOutOfSpace) {
      require(schema.allow_out_of_space, ErrorKind::kSchema,
              "row " + std::to_string(row) + ": out-of-space label not permitted");
    } else {
      require(label >= 0 && (schema.class_count == 0 || label < schema.class_count), ErrorKind::kSchema,
              "row " + std::to_string(row) + ": label " + std::to_string(label) + " outside declared class space");
      max_label = std::max(max_label, label);
    }
    inst.observed_label = static_cast<ClassId>(label);
    if (has_true) {
      long truth = 0;
      require(detail::parse_label(detail::trim(cells[dim + 1]), truth) && truth >= 0 &&
                  (schema.class_count == 0 || truth < schema.class_count),
              ErrorKind::kSchema, "row " + std::to_string(row) + ": invalid true_label");
      inst.true_label = static_cast<ClassId>(truth);
      max_label = std::max(max_label, truth);
    }
    ds.instances.push_back(std::move(inst));
  }
  ds.class_count = schema.class_count > 0 ? schema.class_count : static_cast<int>(max_label + 1);
  return ds;
}

inline Dataset load_dataset(const std::string& path, DatasetSchema schema = {}) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kNotFound, "cannot open dataset file '" + path + "'");
  if (schema.name == "dataset") schema.name = path;
  return read_dataset(in, schema);
}

inline void write_dataset(std::ostream& out, const Dataset& ds, char delimiter = ',') {
  const bool with_truth = !ds.empty() && ds.has_true_labels();
  for (int f = 0; f < ds.dim; ++f) out << 'f' << f << delimiter;
  out << "label";
  if (with_truth) out << delimiter << "true_label";
  out << '\n';
  out << std::setprecision(17);
  for (const auto& inst : ds.instances) {
    for (double v : inst.features) out << v << delimiter;
    out << inst.observed_label;
    if (with_truth) out << delimiter << *inst.true_label;
    out << '\n';
  }
}

inline void save_dataset(const std::string& path, const Dataset& ds, char delimiter = ',') {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write dataset file '" + path + "'");
  write_dataset(out, ds, delimiter);
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Isotropic unit-variance Gaussian blobs. Class means sit on a regular
/// polygon in the first two coordinates (a line when d = 1), so every pair of
/// means is at least `separation` apart.
inline Dataset synth_gaussian(int classes, int per_class, int dim, double separation, std::uint64_t seed) {
  require(classes >= 2, ErrorKind::kDomain, "synth_gaussian needs at least 2 classes");
  require(per_class >= 1, ErrorKind::kDomain, "synth_gaussian needs per_class >= 1");
  require(dim >= 1, ErrorKind::kDomain, "synth_gaussian needs dim >= 1");
  require(separation > 0.0, ErrorKind::kDomain, "synth_gaussian needs separation > 0");

  std::vector<std::vector<double>> means(classes, std::vector<double>(dim, 0.0));
  if (dim == 1) {
    for (int k = 0; k < classes; ++k) means[k][0] = separation * (k - (classes - 1) / 2.0);
  } else {
    // Adjacent polygon vertices are the closest pair: chord = 2 r sin(pi / c).
    const double radius = separation / (2.0 * std::sin(std::numbers::pi / classes));
    for (int k = 0; k < classes; ++k) {
      const double angle = 2.0 * std::numbers::pi * k / classes;
      means[k][0] = radius * std::cos(angle);
      means[k][1] = radius * std::sin(angle);
    }
  }

  Dataset ds;
  ds.name = "synthetic";
  ds.class_count = classes;
  ds.dim = dim;
  ds.instances.reserve(static_cast<std::size_t>(classes) * per_class);
  Rng rng(derive_seed(seed, "synth_gaussian"));
  InstanceId next_id = 0;
  for (int k = 0; k < classes; ++k) {
    for (int j = 0; j < per_class; ++j) {
      Instance inst;
      inst.id = next_id++;
      inst.features.resize(dim);
      for (int f = 0; f < dim; ++f) inst.features[f] = means[k][f] + rng.normal();
      inst.observed_label = k;
      inst.true_label = k;
      ds.instances.push_back(std::move(inst));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Splits and partitions

/// Near-equal part sizes; the remainder goes to the lowest-indexed parts.
inline std::vector<std::size_t> near_equal_sizes(std::size_t total, std::size_t parts) {
  std::vector<std::size_t> sizes(parts, total / parts);
  for (std::size_t p = 0; p < total % parts; ++p) ++sizes[p];
  return sizes;
}

struct PartitionStrategy {
  enum class Kind { kShuffleSplit, kLabelSkew };
  Kind kind = Kind::kShuffleSplit;
  int k_major = 1;
  double skew = 0.8;

  static PartitionStrategy shuffle_split() { return {}; }
  static PartitionStrategy label_skew(int k_major, double skew) { return {Kind::kLabelSkew, k_major, skew}; }
};

inline std::vector<Dataset> partition_non_iid(const Dataset& ds, std::size_t n_participants, std::uint64_t seed,
                                              PartitionStrategy strategy = PartitionStrategy::shuffle_split()) {
  require(n_participants >= 1, ErrorKind::kPartition, "need at least one participant");
  require(!ds.empty(), ErrorKind::kPartition, "cannot partition an empty dataset");
  require(n_participants <= ds.size(), ErrorKind::kPartition,
          std::to_string(n_participants) + " participants exceed " + std::to_string(ds.size()) + " instances");

  Rng rng(derive_seed(seed, "partition"));
  const auto sizes = near_equal_sizes(ds.size(), n_participants);
  std::vector<Dataset> parts;
  parts.reserve(n_participants);
  for (std::size_t p = 0; p < n_participants; ++p) parts.push_back(ds.like(ds.name + "/p" + std::to_string(p)));

  if (strategy.kind == PartitionStrategy::Kind::kShuffleSplit) {
    const auto order = rng.permutation(ds.size());
    std::size_t cursor = 0;
    for (std::size_t p = 0; p < n_participants; ++p) {
      for (std::size_t j = 0; j < sizes[p]; ++j) parts[p].instances.push_back(ds.instances[order[cursor++]]);
    }
    return parts;
  }

  require(strategy.k_major >= 1 && strategy.k_major <= ds.class_count, ErrorKind::kPartition,
          "k_major must lie in [1, c]");
  require(strategy.skew >= 0.0 && strategy.skew <= 1.0, ErrorKind::kPartition, "skew must lie in [0, 1]");

  // Pools keyed by observed label; out-of-space instances form an extra pool.
  const int c = ds.class_count;
  std::vector<std::vector<std::size_t>> pools(c + 1);
  for (std::size_t j = 0; j < ds.size(); ++j) {
    const ClassId y = ds.instances[j].observed_label;
    pools[y == kOutOfSpace ? c : y].push_back(j);
  }
  for (auto& pool : pools) rng.shuffle(pool);

  auto draw = [&](const std::vector<int>& preferred, std::size_t& rr) -> std::size_t {
    for (std::size_t tries = 0; tries < preferred.size(); ++tries) {
      auto& pool = pools[preferred[rr++ % preferred.size()]];
      if (!pool.empty()) {
        const std::size_t idx = pool.back();
        pool.pop_back();
        return idx;
      }
    }
    for (auto& pool : pools) {
      if (!pool.empty()) {
        const std::size_t idx = pool.back();
        pool.pop_back();
        return idx;
      }
    }
    return ds.size();
  };

  for (std::size_t p = 0; p < n_participants; ++p) {
    std::vector<int> major;
    std::vector<int> minor;
    for (int j = 0; j < strategy.k_major; ++j) major.push_back(static_cast<int>((p * strategy.k_major + j) % c));
    for (int k = 0; k <= c; ++k) {
      if (std::find(major.begin(), major.end(), k) == major.end()) minor.push_back(k);
    }
    const auto major_quota = static_cast<std::size_t>(std::llround(strategy.skew * static_cast<double>(sizes[p])));
    std::size_t rr_major = 0;
    std::size_t rr_minor = 0;
    for (std::size_t j = 0; j < sizes[p]; ++j) {
      const std::size_t idx = j < major_quota ? draw(major, rr_major) : draw(minor, rr_minor);
      parts[p].instances.push_back(ds.instances[idx]);
    }
  }
  return parts;
}

struct FoldSplit {
  std::array<Dataset, 3> folds;
};

/// Random three-way split with fold sizes differing by at most one.
inline FoldSplit split_three_folds(const Dataset& ds, std::uint64_t seed) {
  require(ds.size() >= 3, ErrorKind::kSplit,
          "three-fold split needs at least 3 instances, got " + std::to_string(ds.size()));
  Rng rng(derive_seed(seed, "three_folds"));
  const auto order = rng.permutation(ds.size());
  const auto sizes = near_equal_sizes(ds.size(), 3);
  FoldSplit split;
  std::size_t cursor = 0;
  for (std::size_t f = 0; f < 3; ++f) {
    split.folds[f] = ds.like(ds.name + "/fold" + std::to_string(f));
    for (std::size_t j = 0; j < sizes[f]; ++j) split.folds[f].instances.push_back(ds.instances[order[cursor++]]);
  }
  return split;
}

/// Random holdout: returns (held, rest) with round(fraction * n) held instances.
inline std::pair<Dataset, Dataset> split_holdout(const Dataset& ds, double fraction, std::uint64_t seed) {
  require(fraction >= 0.0 && fraction <= 1.0, ErrorKind::kDomain, "holdout fraction must lie in [0, 1]");
  Rng rng(derive_seed(seed, "holdout"));
  auto order = rng.permutation(ds.size());
  const auto held_count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  Dataset held = ds.like();
  Dataset rest = ds.like();
  for (std::size_t j = 0; j < order.size(); ++j) {
    (j < held_count ? held : rest).instances.push_back(ds.instances[order[j]]);
  }
  return {std::move(held), std::move(rest)};
}

/// All and only instances whose observed label is k, order preserved.
inline Dataset class_subset(const Dataset& ds, ClassId k) {
  require(k >= 0 && k < ds.class_count, ErrorKind::kDomain, "class id outside class space");
  Dataset out = ds.like(ds.name + "/class" + std::to_string(k));
  for (const auto& inst : ds.instances) {
    if (inst.observed_label == k) out.instances.push_back(inst);
  }
  return out;
}

inline Dataset out_of_space_subset(const Dataset& ds) {
  Dataset out = ds.like(ds.name + "/out_of_space");
  for (const auto& inst : ds.instances) {
    if (inst.observed_label == kOutOfSpace) out.instances.push_back(inst);
  }
  return out;
}

/// Instances whose id is in `keep`, in dataset order.
inline Dataset select_ids(const Dataset& ds, const std::unordered_set<InstanceId>& keep) {
  Dataset out = ds.like();
  for (const auto& inst : ds.instances) {
    if (keep.contains(inst.id)) out.instances.push_back(inst);
  }
  return out;
}

inline Dataset concat(const Dataset& a, const Dataset& b) {
  require(a.class_count == b.class_count && a.dim == b.dim, ErrorKind::kSchema, "cannot concatenate mismatched datasets");
  Dataset out = a;
  out.instances.insert(out.instances.end(), b.instances.begin(), b.instances.end());
  return out;
}

}  // namespace fednl
