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

// HTTP/JSON quality service over a data directory:
//
//   <data_dir>/manifest.json     images known to the grading queue
//   <data_dir>/grades.jsonl      append-only grade store
//   <data_dir>/models/*.fqc      model registry, keyed by SHA-256 of the file
//   <data_dir>/active_model      id of the active model (written on activation)
//   <data_dir>/report.json       latest evaluation report
//
// Image paths in the manifest are relative to the data directory.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fqc/checkpoint.hpp"
#include "fqc/dataset.hpp"
#include "fqc/triage.hpp"

namespace httplib {
class Server;
}

namespace fqc {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

struct ModelRegistryEntry {
  std::string model_id;  // sha256 of the checkpoint bytes
  std::filesystem::path checkpoint_path;
  nlohmann::json arch_summary;
  std::string training_digest;  // sha256 of the checkpoint metadata JSON
  std::string created_at;
};

nlohmann::json to_json(const ModelRegistryEntry& e);

/// Hashes and summarizes one checkpoint file.
ModelRegistryEntry describe_checkpoint(const std::filesystem::path& path);

struct ScoreResponse {
  std::string model_id;
  double score = 0.0;
  Band band = Band::kAccept;
  bool recapture_advised = false;
};

nlohmann::json to_json(const ScoreResponse& r);

/// Scores one encoded image (PPM or PNG, sniffed from the bytes).
ScoreResponse score_image_bytes(std::span<const std::uint8_t> bytes, const Checkpoint& model,
                                const std::string& model_id, const BandThresholds& thresholds,
                                bool recapture_on_ambiguous = true);

/// HTTP status for a library exception: 400 bad input, 404 unknown id,
/// 422 no fundus field, 503 no active model, 500 otherwise.
int http_status_for(const std::exception& e);

struct ServiceConfig {
  std::filesystem::path data_dir;
  BandThresholds thresholds;
  /// Whether an ambiguous verdict advises recapture (reject always does).
  bool recapture_on_ambiguous = true;
};

class QcService {
 public:
  explicit QcService(ServiceConfig config);

  /// UnavailableError without an active model; DecodeError, NoFundusError
  /// for unusable images. Never mutates state.
  ScoreResponse score(std::span<const std::uint8_t> image) const;

  /// Images `grader` has not graded yet, in manifest order, each with its
  /// URL and the active model's verdict (null without a model). At most
  /// `limit` items when set.
  nlohmann::json queue(const std::string& grader, std::optional<std::size_t> limit = {}) const;

  /// Raw bytes of an image file and its content type. NotFoundError for an
  /// unknown id.
  std::vector<std::uint8_t> image_bytes(const std::string& image_id,
                                        std::string* content_type = nullptr) const;

  /// Appends unless the grader's latest label for the image is the same.
  /// Returns the recomputed consensus.
  Consensus record_grade(const GradeRecord& record);
  Consensus consensus_of(const std::string& image_id) const;

  /// Rescans <data_dir>/models.
  void refresh_models();
  std::vector<ModelRegistryEntry> models() const;
  std::optional<std::string> active_model_id() const;
  /// Atomic: requests already holding the old model finish on it.
  void activate(const std::string& model_id);

  /// Contents of report.json. NotFoundError when absent.
  nlohmann::json report() const;

  const DatasetManifest& manifest() const { return manifest_; }

  /// Registers the /api routes.
  void mount(httplib::Server& server);

 private:
  struct ActiveModel {
    ModelRegistryEntry entry;
    Checkpoint checkpoint;
  };

  std::shared_ptr<const ActiveModel> active() const;
  const ManifestEntry& entry(const std::string& image_id) const;
  std::vector<GradeRecord> grades_for(const std::string& image_id,
                                      const std::vector<GradeRecord>& store) const;

  ServiceConfig config_;
  DatasetManifest manifest_;
  GradeStore store_;

  mutable std::mutex active_mutex_;
  std::shared_ptr<const ActiveModel> active_;

  mutable std::mutex registry_mutex_;
  std::map<std::string, ModelRegistryEntry> registry_;

  std::mutex grade_writer_;

  mutable std::mutex cache_mutex_;
  mutable std::map<std::pair<std::string, std::string>, ScoreResponse> verdicts_;
};

}  // namespace fqc
