// Copyright 2026 The fundus-qc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Decisions, quality bands and evaluation metrics over classifier scores.
// Positive class throughout is "accept" (+1).

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fqc/dataset.hpp"

namespace fqc {

enum class Band { kAccept, kAmbiguous, kReject };

std::string to_string(Band band);

struct BandThresholds {
  double reject_below = -2.2;
  double accept_at_or_above = -0.5;

  /// ConfigError unless both are finite and reject_below < accept_at_or_above.
  void validate() const;
};

struct QualityVerdict {
  double score = 0.0;
  Band band = Band::kAccept;
  std::string model_id;
  BandThresholds thresholds;
};

nlohmann::json to_json(const QualityVerdict& verdict);

/// accept iff score >= 0. NumericError for non-finite scores.
Label binary_decision(double score);

/// reject below reject_below, accept at or above accept_at_or_above,
/// ambiguous in between.
QualityVerdict band(double score, const BandThresholds& thresholds = {},
                    std::string model_id = {});

/// Fraction of positions where decision == label. InputError when empty or
/// of unequal length.
double accuracy(std::span<const Label> decisions, std::span<const Label> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  bool operator==(const RocPoint&) const = default;
};

/// One point per distinct score (threshold sweep from high to low, predict
/// positive when score >= threshold), preceded by (0,0). Labels are +1/-1.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Integer pair counts behind the AUC: positives above negatives, ties,
/// and the class sizes.
struct PairCounts {
  std::uint64_t wins = 0;
  std::uint64_t ties = 0;
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
};

PairCounts auc_pair_counts(std::span<const double> scores, std::span<const int> labels);

/// (2 * wins + ties) / (2 * positives * negatives). The normative definition.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Trapezoidal area under roc_curve. Cross-check for auc().
double auc_trapezoid(std::span<const double> scores, std::span<const int> labels);

struct CategoryStats {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single score
  double min = 0.0;
  double max = 0.0;
};

CategoryStats category_stats(std::span<const double> scores);

struct EvalReport {
  double accuracy = 0.0;
  double auc = 0.0;
  std::vector<RocPoint> roc_points;
  /// "accept", "reject", "ambiguous"; a category without images is absent.
  std::map<std::string, CategoryStats> categories;
  BandThresholds thresholds;
};

/// Accuracy and ROC/AUC over accept/reject images only; score statistics per
/// category including ambiguous. Ungraded entries are ignored.
EvalReport eval_report(std::span<const double> scores, std::span<const Consensus> consensus,
                       const BandThresholds& thresholds = {});

nlohmann::json to_json(const EvalReport& report);
/// "fpr,tpr" header then one line per point.
std::string roc_csv(const std::vector<RocPoint>& points);

}  // namespace fqc
