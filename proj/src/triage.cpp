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

#include "fqc/triage.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fqc/errors.hpp"

namespace fqc {

std::string to_string(Band band) {
  switch (band) {
    case Band::kAccept: return "accept";
    case Band::kAmbiguous: return "ambiguous";
    case Band::kReject: return "reject";
  }
  return "ambiguous";
}

void BandThresholds::validate() const {
  if (!std::isfinite(reject_below) || !std::isfinite(accept_at_or_above) ||
      !(reject_below < accept_at_or_above)) {
    throw ConfigError("band thresholds need reject_below < accept_at_or_above");
  }
}

namespace {

void require_finite(double score) {
  if (!std::isfinite(score)) throw NumericError("score is not finite");
}

// Sorted (score, label) pairs plus class sizes; InputError unless both
// classes are present.
struct Ranked {
  std::vector<std::pair<double, int>> items;  // descending score
  std::uint64_t positives = 0, negatives = 0;
};

Ranked rank(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw InputError("scores and labels differ in length");
  }
  Ranked r;
  r.items.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    require_finite(scores[i]);
    if (labels[i] == 1) {
      ++r.positives;
    } else if (labels[i] == -1) {
      ++r.negatives;
    } else {
      throw LabelError("ROC labels must be +1 or -1");
    }
    r.items.emplace_back(scores[i], labels[i]);
  }
  if (r.positives == 0 || r.negatives == 0) {
    throw InputError("ROC needs both classes present");
  }
  std::sort(r.items.begin(), r.items.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  return r;
}

}  // namespace

nlohmann::json to_json(const QualityVerdict& v) {
  return {{"score", v.score},
          {"band", to_string(v.band)},
          {"model_id", v.model_id},
          {"thresholds",
           {{"reject_below", v.thresholds.reject_below},
            {"accept_at_or_above", v.thresholds.accept_at_or_above}}}};
}

Label binary_decision(double score) {
  require_finite(score);
  return score >= 0.0 ? Label::kAccept : Label::kReject;
}

QualityVerdict band(double score, const BandThresholds& thresholds, std::string model_id) {
  require_finite(score);
  thresholds.validate();
  QualityVerdict v{score, Band::kAmbiguous, std::move(model_id), thresholds};
  if (score < thresholds.reject_below) {
    v.band = Band::kReject;
  } else if (score >= thresholds.accept_at_or_above) {
    v.band = Band::kAccept;
  }
  return v;
}

double accuracy(std::span<const Label> decisions, std::span<const Label> labels) {
  if (decisions.empty() || decisions.size() != labels.size()) {
    throw InputError("accuracy needs equal, non-zero numbers of decisions and labels");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) hits += decisions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(decisions.size());
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  const auto r = rank(scores, labels);
  std::vector<RocPoint> points{{0.0, 0.0}};
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < r.items.size();) {
    const double threshold = r.items[i].first;
    for (; i < r.items.size() && r.items[i].first == threshold; ++i) {
      (r.items[i].second == 1 ? tp : fp) += 1;
    }
    points.push_back({static_cast<double>(fp) / static_cast<double>(r.negatives),
                      static_cast<double>(tp) / static_cast<double>(r.positives)});
  }
  return points;
}

PairCounts auc_pair_counts(std::span<const double> scores, std::span<const int> labels) {
  const auto r = rank(scores, labels);
  PairCounts c{0, 0, r.positives, r.negatives};
  // Walk tie groups from the highest score; every positive in a group beats
  // the negatives in all lower groups and ties the negatives in its own.
  std::uint64_t neg_remaining = r.negatives;
  for (std::size_t i = 0; i < r.items.size();) {
    const double s = r.items[i].first;
    std::uint64_t pos = 0, neg = 0;
    for (; i < r.items.size() && r.items[i].first == s; ++i) {
      (r.items[i].second == 1 ? pos : neg) += 1;
    }
    neg_remaining -= neg;
    c.wins += pos * neg_remaining;
    c.ties += pos * neg;
  }
  return c;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  const auto c = auc_pair_counts(scores, labels);
  return static_cast<double>(2 * c.wins + c.ties) /
         (2.0 * static_cast<double>(c.positives) * static_cast<double>(c.negatives));
}

double auc_trapezoid(std::span<const double> scores, std::span<const int> labels) {
  const auto points = roc_curve(scores, labels);
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  }
  return area;
}

CategoryStats category_stats(std::span<const double> scores) {
  CategoryStats s;
  s.count = scores.size();
  if (scores.empty()) return s;
  s.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(s.count);
  double ss = 0.0;
  for (double v : scores) ss += (v - s.mean) * (v - s.mean);
  s.stddev = s.count > 1 ? std::sqrt(ss / static_cast<double>(s.count - 1)) : 0.0;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

EvalReport eval_report(std::span<const double> scores, std::span<const Consensus> consensus,
                       const BandThresholds& thresholds) {
  if (scores.size() != consensus.size()) {
    throw InputError("scores and consensus labels differ in length");
  }
  thresholds.validate();
  std::vector<double> binary_scores;
  std::vector<int> binary_labels;
  std::vector<Label> decisions, truth;
  std::map<std::string, std::vector<double>> by_category;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    require_finite(scores[i]);
    const Consensus c = consensus[i];
    if (c == Consensus::kUngraded) continue;
    by_category[to_string(c)].push_back(scores[i]);
    if (c == Consensus::kAmbiguous) continue;
    const Label label = c == Consensus::kAccept ? Label::kAccept : Label::kReject;
    binary_scores.push_back(scores[i]);
    binary_labels.push_back(label_sign(label));
    decisions.push_back(binary_decision(scores[i]));
    truth.push_back(label);
  }
  EvalReport report;
  report.thresholds = thresholds;
  report.accuracy = accuracy(decisions, truth);
  report.auc = auc(binary_scores, binary_labels);
  report.roc_points = roc_curve(binary_scores, binary_labels);
  for (const auto& [name, values] : by_category) {
    report.categories[name] = category_stats(values);
  }
  return report;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& p : report.roc_points) roc.push_back({p.fpr, p.tpr});
  nlohmann::json categories = nlohmann::json::object();
  for (const auto& [name, s] : report.categories) {
    categories[name] = {{"count", s.count}, {"mean", s.mean}, {"stddev", s.stddev},
                        {"min", s.min},     {"max", s.max}};
  }
  return {{"accuracy", report.accuracy},
          {"auc", report.auc},
          {"roc_points", std::move(roc)},
          {"categories", std::move(categories)},
          {"thresholds",
           {{"reject_below", report.thresholds.reject_below},
            {"accept_at_or_above", report.thresholds.accept_at_or_above}}}};
}

std::string roc_csv(const std::vector<RocPoint>& points) {
  std::ostringstream out;
  out.precision(17);
  out << "fpr,tpr\n";
  for (const auto& p : points) out << p.fpr << ',' << p.tpr << '\n';
  return out.str();
}

}  // namespace fqc
