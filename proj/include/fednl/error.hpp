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

#include <stdexcept>
#include <string>

namespace fednl {

enum class ErrorKind {
  kParse,
  kSchema,
  kPartition,
  kSplit,
  kDomain,
  kDominance,
  kNoiseMatrix,
  kUndefinedLoss,
  kDivergence,
  kEstimation,
  kAllocation,
  kDegenerateAggregate,
  kAggregation,
  kNoStrongConvexity,
  kMeasurement,
  kMetric,
  kRatio,
  kConfig,
  kIo,
  kNotFound,
  kReport,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kSchema: return "schema error";
    case ErrorKind::kPartition: return "partition error";
    case ErrorKind::kSplit: return "split error";
    case ErrorKind::kDomain: return "domain error";
    case ErrorKind::kDominance: return "dominance error";
    case ErrorKind::kNoiseMatrix: return "noise matrix error";
    case ErrorKind::kUndefinedLoss: return "undefined-loss error";
    case ErrorKind::kDivergence: return "divergence error";
    case ErrorKind::kEstimation: return "estimation error";
    case ErrorKind::kAllocation: return "allocation error";
    case ErrorKind::kDegenerateAggregate: return "degenerate-aggregate error";
    case ErrorKind::kAggregation: return "aggregation error";
    case ErrorKind::kNoStrongConvexity: return "no-strong-convexity error";
    case ErrorKind::kMeasurement: return "measurement error";
    case ErrorKind::kMetric: return "metric error";
    case ErrorKind::kRatio: return "ratio error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kNotFound: return "not-found error";
    case ErrorKind::kReport: return "report error";
  }
  return "error";
}

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it to an exit code without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace fednl
