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

#include "fqc/trainer.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <sstream>

#include "fqc/errors.hpp"
#include "fqc/image.hpp"
#include "fqc/ops.hpp"
#include "fqc/triage.hpp"

namespace fqc {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(lr_end > 0) || !(lr_end <= lr_start) || !std::isfinite(lr_start)) {
    throw ConfigError("learning rates need 0 < lr_end <= lr_start");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  cfg.validate();
  if (epoch < 1 || epoch > cfg.epochs) {
    throw ConfigError("epoch " + std::to_string(epoch) + " outside 1.." +
                      std::to_string(cfg.epochs));
  }
  if (cfg.epochs == 1) return cfg.lr_start;
  const double t = static_cast<double>(epoch - 1) / static_cast<double>(cfg.epochs - 1);
  return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, t);
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"learning_rate", r.learning_rate},
          {"mean_train_loss", r.mean_train_loss},
          {"train_accuracy", r.train_accuracy},
          {"wall_time", r.wall_time}};
}

EpochRecord epoch_record_from_json(const nlohmann::json& j) {
  try {
    return {j.at("epoch").get<std::size_t>(), j.at("learning_rate").get<double>(),
            j.at("mean_train_loss").get<double>(), j.at("train_accuracy").get<double>(),
            j.value("wall_time", 0.0)};
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad history record: ") + e.what());
  }
}

std::string history_jsonl(const TrainHistory& history) {
  std::string out;
  for (const auto& r : history.epochs) out += to_json(r).dump() + "\n";
  return out;
}

TrainHistory parse_history_jsonl(const std::string& text) {
  TrainHistory h;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      h.epochs.push_back(epoch_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(std::string("bad history line: ") + e.what());
    }
  }
  return h;
}

std::string checkpoint_name(std::size_t epoch) {
  return "epoch_" + std::to_string(epoch) + ".fqc";
}

// ------------------------------------------------------------------ examples

Examples load_examples(const DatasetManifest& manifest, const std::filesystem::path& root,
                       std::optional<Split> split, std::size_t side, bool keep_unlabeled) {
  std::vector<const ManifestEntry*> chosen;
  for (const auto& e : manifest.entries) {
    if (split && e.split != *split) continue;
    const bool labeled = e.consensus == Consensus::kAccept || e.consensus == Consensus::kReject;
    if (!labeled && !keep_unlabeled) continue;
    chosen.push_back(&e);
  }
  Examples ex;
  if (chosen.empty()) return ex;
  const std::size_t per_image = 3 * side * side;
  ex.images = ModelTensor({chosen.size(), 3, side, side});
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    try {
      const auto t = preprocess(load_image(root / chosen[i]->path), side);
      std::copy(t.values().begin(), t.values().end(),
                ex.images.data().begin() + static_cast<long>(i * per_image));
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  for (const auto* e : chosen) {
    ex.consensus.push_back(e->consensus);
    ex.ids.push_back(e->image_id);
  }
  return ex;
}

std::vector<int> binary_labels(const Examples& examples) {
  std::vector<int> labels;
  labels.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    switch (examples.consensus[i]) {
      case Consensus::kAccept: labels.push_back(1); break;
      case Consensus::kReject: labels.push_back(-1); break;
      default:
        throw ConsistencyError("image " + examples.ids[i] + " has consensus " +
                               to_string(examples.consensus[i]) +
                               " and cannot be used as a training example");
    }
  }
  return labels;
}

namespace {

ModelTensor gather(const Examples& ex, std::span<const std::size_t> rows) {
  Shape shape = ex.images.shape();
  const std::size_t per = ex.images.size() / shape[0];
  shape[0] = rows.size();
  ModelTensor batch(shape);
  auto dst = batch.data();
  const auto src = ex.images.data();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::copy_n(src.begin() + static_cast<long>(rows[k] * per), per,
                dst.begin() + static_cast<long>(k * per));
  }
  return batch;
}

void check_input(const ArchitectureSpec& arch, const Examples& ex) {
  const auto& s = ex.images.shape();
  if (s.size() != 4 || s[1] != arch.input.channels || s[2] != arch.input.height ||
      s[3] != arch.input.width) {
    throw ShapeError("examples of shape " + to_string(s) + " do not fit the model input " +
                     std::to_string(arch.input.channels) + "x" +
                     std::to_string(arch.input.height) + "x" + std::to_string(arch.input.width));
  }
}

}  // namespace

std::vector<double> score_examples(const ArchitectureSpec& arch, const ModelParams& params,
                                   const Examples& examples, std::size_t batch_size) {
  if (examples.size() == 0) return {};
  check_input(arch, examples);
  std::vector<double> scores;
  scores.reserve(examples.size());
  std::vector<std::size_t> rows(examples.size());
  std::iota(rows.begin(), rows.end(), 0);
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, rows.size() - start);
    const auto out = forward_scores(arch, params, gather(examples, {rows.data() + start, n}));
    for (float s : out.values()) scores.push_back(s);
  }
  return scores;
}

EpochResult evaluate_epoch(const ArchitectureSpec& arch, const ModelParams& params,
                           const Examples& examples, std::size_t batch_size) {
  if (examples.size() == 0) throw ConfigError("cannot evaluate an empty split");
  const auto labels = binary_labels(examples);
  const auto scores = score_examples(arch, params, examples, batch_size);
  double loss = 0.0;
  std::vector<Label> decisions, truth;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    loss += std::max(0.0, 1.0 - labels[i] * scores[i]);
    decisions.push_back(binary_decision(scores[i]));
    truth.push_back(labels[i] == 1 ? Label::kAccept : Label::kReject);
  }
  return {loss / static_cast<double>(scores.size()), accuracy(decisions, truth)};
}

// --------------------------------------------------------------------- train

TrainResult train(const ArchitectureSpec& arch, const Examples& data, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  arch.validate();
  if (data.size() == 0) throw ConfigError("training split is empty");
  check_input(arch, data);
  // Batch builder guard: ambiguous or ungraded images never reach backward.
  const auto labels = binary_labels(data);
  const bool has_pos = std::count(labels.begin(), labels.end(), 1) > 0;
  const bool has_neg = std::count(labels.begin(), labels.end(), -1) > 0;
  if (!has_pos || !has_neg) throw ConfigError("training split needs both accept and reject");

  TrainResult result;
  std::size_t first_epoch = 1;
  if (options.resume) {
    if (!(options.resume->arch == arch)) {
      throw ConfigError("resume checkpoint has a different architecture");
    }
    options.resume->params.check_against(arch);
    result.params = options.resume->params.clone();
    first_epoch = options.resume->meta.epoch + 1;
    if (first_epoch > cfg.epochs + 1) {
      throw ConfigError("resume checkpoint is past the configured number of epochs");
    }
    for (const auto& r : options.prior_history.epochs) {
      if (r.epoch < first_epoch) result.history.epochs.push_back(r);
    }
  } else {
    result.params = ModelParams::init(arch, cfg.seed);
  }
  result.params.set_requires_grad(true);
  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(cfg, epoch);
    std::iota(order.begin(), order.end(), 0);
    if (cfg.shuffle_each_epoch) {
      // Fisher-Yates with explicit draws, so the order does not depend on
      // the standard library's distribution implementation.
      std::mt19937_64 rng(cfg.seed ^ static_cast<std::uint64_t>(epoch));
      for (std::size_t i = order.size() - 1; i > 0; --i) {
        std::swap(order[i], order[rng() % (i + 1)]);
      }
    }
    double loss_sum = 0.0;
    std::size_t hits = 0, batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> rows(order.data() + start, n);
      std::vector<int> batch_labels;
      for (std::size_t r : rows) batch_labels.push_back(labels[r]);

      Tape<Real> tape;
      const auto scores = forward_scores(arch, result.params, gather(data, rows), &tape);
      auto loss = ops::hinge_loss<Real>(&tape, scores, batch_labels);
      const double value = loss.item();
      if (!std::isfinite(value)) throw DivergenceError(epoch, batch_index + 1);
      tape.backward(loss);
      sgd_step<Real>(result.params.tensors(), lr);

      loss_sum += value * static_cast<double>(n);
      for (std::size_t k = 0; k < n; ++k) {
        hits += (scores[k] >= 0 ? 1 : -1) == batch_labels[k];
      }
    }
    EpochRecord record;
    record.epoch = epoch;
    record.learning_rate = lr;
    record.mean_train_loss = loss_sum / static_cast<double>(order.size());
    record.train_accuracy = static_cast<double>(hits) / static_cast<double>(order.size());
    record.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.history.epochs.push_back(record);

    if (options.out_dir) {
      const bool last = epoch == cfg.epochs;
      if (last || (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)) {
        CheckpointMeta meta;
        meta.seed = cfg.seed;
        meta.epoch = static_cast<std::uint32_t>(epoch);
        save_checkpoint(result.params, arch, *options.out_dir / checkpoint_name(epoch), meta);
      }
      const auto text = history_jsonl(result.history);
      write_file_bytes(*options.out_dir / "history.jsonl",
                       std::vector<std::uint8_t>(text.begin(), text.end()));
    }
    if (options.on_epoch) options.on_epoch(record);
  }
  result.params.set_requires_grad(false);
  return result;
}

}  // namespace fqc
