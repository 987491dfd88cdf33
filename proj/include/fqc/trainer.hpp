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

// Mini-batch SGD on the hinge loss with a geometric learning-rate schedule.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fqc/checkpoint.hpp"
#include "fqc/dataset.hpp"
#include "fqc/model.hpp"

namespace fqc {

struct TrainConfig {
  std::size_t epochs = 20;
  double lr_start = 0.01;
  double lr_end = 0.0001;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  bool shuffle_each_epoch = true;
  std::size_t checkpoint_every = 1;  // 0 disables intermediate checkpoints

  /// ConfigError unless epochs >= 1, 0 < lr_end <= lr_start, batch_size >= 1.
  void validate() const;
};

/// lr_start * (lr_end / lr_start)^((epoch - 1) / (epochs - 1)); lr_start when
/// there is a single epoch. ConfigError when epoch is outside 1..epochs.
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double mean_train_loss = 0.0;  // running mean over the epoch's batches
  double train_accuracy = 0.0;   // of the scores seen before each update
  double wall_time = 0.0;        // seconds
};

nlohmann::json to_json(const EpochRecord& r);
EpochRecord epoch_record_from_json(const nlohmann::json& j);

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

/// One JSON record per line.
std::string history_jsonl(const TrainHistory& history);
TrainHistory parse_history_jsonl(const std::string& text);

/// Preprocessed images with their consensus labels.
struct Examples {
  ModelTensor images;  // [N, C, H, W]; unset when there are no examples
  std::vector<Consensus> consensus;
  std::vector<std::string> ids;

  std::size_t size() const { return ids.size(); }
};

/// Loads and preprocesses the entries of `split` (any split when nullopt).
/// Paths are resolved against `root`. Ambiguous and ungraded entries are
/// kept only when `keep_unlabeled` is set.
Examples load_examples(const DatasetManifest& manifest, const std::filesystem::path& root,
                       std::optional<Split> split, std::size_t side, bool keep_unlabeled = false);

/// +1/-1 per example. ConsistencyError if any example is not accept/reject.
std::vector<int> binary_labels(const Examples& examples);

struct EpochResult {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

/// Scores `examples` in batches of `batch_size`.
std::vector<double> score_examples(const ArchitectureSpec& arch, const ModelParams& params,
                                   const Examples& examples, std::size_t batch_size = 32);

/// Mean hinge loss and sign-rule accuracy. ConfigError when empty.
EpochResult evaluate_epoch(const ArchitectureSpec& arch, const ModelParams& params,
                           const Examples& examples, std::size_t batch_size = 32);

struct TrainOptions {
  /// epoch_<N>.fqc and history.jsonl go here when set.
  std::optional<std::filesystem::path> out_dir;
  /// Continue from this checkpoint (its metadata epoch is the last completed
  /// epoch). The config must be the one the checkpoint was trained with.
  std::optional<Checkpoint> resume;
  /// Earlier records to keep in front of the new ones when resuming.
  TrainHistory prior_history;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

/// Trains on `train` (accept/reject only). The run is a pure function of
/// (arch, examples, cfg): each epoch shuffles with seed cfg.seed ^ epoch.
/// ConfigError for a single-class set, DivergenceError for a non-finite loss.
TrainResult train(const ArchitectureSpec& arch, const Examples& train, const TrainConfig& cfg,
                  const TrainOptions& options = {});

std::string checkpoint_name(std::size_t epoch);

}  // namespace fqc
