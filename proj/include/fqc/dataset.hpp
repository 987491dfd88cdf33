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

// Grades, consensus, the dataset manifest and the train/test split.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace fqc {

enum class Label { kAccept, kReject };
enum class Consensus { kAccept, kReject, kAmbiguous, kUngraded };
enum class Split { kUnassigned, kTrain, kTest, kExcluded };

std::string to_string(Label label);
std::string to_string(Consensus consensus);
std::string to_string(Split split);
/// "accept" / "reject"; LabelError otherwise.
Label parse_label(std::string_view text);
Consensus parse_consensus(std::string_view text);
Split parse_split(std::string_view text);

/// +1 for accept, -1 for reject.
inline int label_sign(Label label) { return label == Label::kAccept ? 1 : -1; }

/// Microseconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

/// Accepts "YYYY-MM-DDTHH:MM:SS[.ffffff](Z|+00:00)". InputError otherwise.
Timestamp parse_timestamp(std::string_view text);
/// "YYYY-MM-DDTHH:MM:SSZ", with ".ffffff" only when there are microseconds.
std::string format_timestamp(Timestamp ts);
Timestamp now_timestamp();

struct GradeRecord {
  std::string image_id;
  std::string grader_id;
  Label label = Label::kAccept;
  std::string timestamp;  // ISO-8601 UTC

  bool operator==(const GradeRecord&) const = default;
};

nlohmann::json to_json(const GradeRecord& record);
/// InputError / LabelError on malformed records.
GradeRecord grade_from_json(const nlohmann::json& j);

/// One grade per grader: the latest timestamp wins, later records win ties.
/// Result is ordered by grader id.
std::vector<GradeRecord> latest_per_grader(const std::vector<GradeRecord>& grades);

/// Fewer than `required_graders` distinct graders -> ungraded; unanimous ->
/// that label; any disagreement -> ambiguous.
Consensus consensus(const std::vector<GradeRecord>& grades, std::size_t required_graders = 3);

struct ManifestEntry {
  std::string image_id;
  std::string path;  // relative to the manifest's directory, or absolute
  std::vector<GradeRecord> grades;
  Consensus consensus = Consensus::kUngraded;
  Split split = Split::kUnassigned;
  /// Ground-truth geometry of synthetic images, opaque here.
  std::optional<nlohmann::json> geometry;
};

struct DatasetManifest {
  std::size_t required_graders = 3;
  std::vector<ManifestEntry> entries;

  /// ConsistencyError on a duplicate id.
  void add(ManifestEntry entry);
  ManifestEntry* find(std::string_view image_id);
  const ManifestEntry* find(std::string_view image_id) const;
  /// Replaces every entry's grades with the matching records and recomputes
  /// consensus. Records for unknown ids are ignored.
  void apply_grades(const std::vector<GradeRecord>& records);
  void recompute_consensus();
  /// Throws ConsistencyError when ids repeat or an ambiguous entry is in
  /// train.
  void validate() const;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct SplitResult {
  DatasetManifest manifest;
  std::vector<std::string> warnings;
};

/// Assigns splits to entries that have none. Existing train/test assignments
/// are kept, so adding images never moves old ones. Ambiguous entries go to
/// test, ungraded ones are excluded. Each class is filled up to
/// round(train_fraction * class size) in train, taking unassigned entries in
/// order of a stable hash of (id, seed); the rest go to test.
SplitResult split_dataset(const DatasetManifest& manifest, double train_fraction,
                          std::uint64_t seed);

/// Stable 64-bit hash of (id, seed), independent of ingestion order.
std::uint64_t split_hash(std::string_view image_id, std::uint64_t seed);

/// Append-only JSONL store of grade records.
class GradeStore {
 public:
  explicit GradeStore(std::filesystem::path path) : path_(std::move(path)) {}

  /// Every complete record in file order. A missing file is an empty store;
  /// a trailing partial line is ignored.
  std::vector<GradeRecord> load() const;
  void append(const GradeRecord& record) const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fqc
