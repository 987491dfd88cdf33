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

#include "fqc/service.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>

#include "httplib.h"

#include "fqc/errors.hpp"
#include "fqc/image.hpp"

namespace fqc {

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 failed");
  }
  std::string hex;
  hex.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) {
    char buf[3];
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

nlohmann::json to_json(const ModelRegistryEntry& e) {
  return {{"model_id", e.model_id},
          {"checkpoint", e.checkpoint_path.filename().string()},
          {"arch", e.arch_summary},
          {"training_digest", e.training_digest},
          {"created_at", e.created_at}};
}

namespace {

nlohmann::json arch_summary(const ArchitectureSpec& arch) {
  return {{"input", {arch.input.channels, arch.input.height, arch.input.width}},
          {"conv_filters", arch.conv_filters()},
          {"dense_widths", arch.dense_widths()},
          {"reduction", arch.reduction}};
}

std::string text_of(const std::vector<std::uint8_t>& bytes) {
  return {bytes.begin(), bytes.end()};
}

}  // namespace

ModelRegistryEntry describe_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const auto ck = decode_checkpoint(bytes);
  const nlohmann::json meta = {
      {"seed", ck.meta.seed}, {"epoch", ck.meta.epoch}, {"created_at", ck.meta.created_at}};
  const std::string meta_text = meta.dump();
  ModelRegistryEntry e;
  e.model_id = sha256_hex(bytes);
  e.checkpoint_path = path;
  e.arch_summary = arch_summary(ck.arch);
  e.training_digest = sha256_hex({reinterpret_cast<const std::uint8_t*>(meta_text.data()),
                                  meta_text.size()});
  e.created_at = ck.meta.created_at;
  return e;
}

nlohmann::json to_json(const ScoreResponse& r) {
  return {{"model_id", r.model_id},
          {"score", r.score},
          {"band", to_string(r.band)},
          {"recapture_advised", r.recapture_advised}};
}

ScoreResponse score_image_bytes(std::span<const std::uint8_t> bytes, const Checkpoint& model,
                                const std::string& model_id, const BandThresholds& thresholds,
                                bool recapture_on_ambiguous) {
  const auto image = decode_image(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
  const auto input = preprocess(image, model.arch.input.height);
  const double s = fqc::score(model.arch, model.params, input);
  const auto verdict = band(s, thresholds, model_id);
  ScoreResponse r;
  r.model_id = model_id;
  r.score = s;
  r.band = verdict.band;
  r.recapture_advised = verdict.band == Band::kReject ||
                        (verdict.band == Band::kAmbiguous && recapture_on_ambiguous);
  return r;
}

int http_status_for(const std::exception& e) {
  if (dynamic_cast<const NoFundusError*>(&e)) return 422;
  if (dynamic_cast<const NotFoundError*>(&e)) return 404;
  if (dynamic_cast<const UnavailableError*>(&e)) return 503;
  if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const DecodeError*>(&e) ||
      dynamic_cast<const LabelError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const InvalidBoxError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
      dynamic_cast<const nlohmann::json::exception*>(&e)) {
    return 400;
  }
  return 500;
}

// ------------------------------------------------------------------- service

QcService::QcService(ServiceConfig config)
    : config_(std::move(config)), store_(config_.data_dir / "grades.jsonl") {
  config_.thresholds.validate();
  const auto manifest_path = config_.data_dir / "manifest.json";
  if (std::filesystem::exists(manifest_path)) manifest_ = load_manifest(manifest_path);
  refresh_models();
  const auto active_path = config_.data_dir / "active_model";
  if (std::filesystem::exists(active_path)) {
    auto id = text_of(read_file_bytes(active_path));
    id.erase(id.find_last_not_of(" \n\r\t") + 1);
    activate(id);
  }
}

std::shared_ptr<const QcService::ActiveModel> QcService::active() const {
  std::lock_guard lock(active_mutex_);
  return active_;
}

ScoreResponse QcService::score(std::span<const std::uint8_t> image) const {
  const auto model = active();
  if (!model) throw UnavailableError("no active model");
  return score_image_bytes(image, model->checkpoint, model->entry.model_id, config_.thresholds,
                           config_.recapture_on_ambiguous);
}

const ManifestEntry& QcService::entry(const std::string& image_id) const {
  const auto* e = manifest_.find(image_id);
  if (!e) throw NotFoundError("unknown image " + image_id);
  return *e;
}

std::vector<GradeRecord> QcService::grades_for(const std::string& image_id,
                                               const std::vector<GradeRecord>& store) const {
  std::vector<GradeRecord> grades = entry(image_id).grades;
  for (const auto& g : store) {
    if (g.image_id == image_id) grades.push_back(g);
  }
  return grades;
}

nlohmann::json QcService::queue(const std::string& grader,
                                std::optional<std::size_t> limit) const {
  const auto store = store_.load();
  const auto model = active();
  nlohmann::json items = nlohmann::json::array();
  for (const auto& e : manifest_.entries) {
    if (limit && items.size() >= *limit) break;
    const auto grades = grades_for(e.image_id, store);
    const bool done = std::any_of(grades.begin(), grades.end(),
                                  [&](const GradeRecord& g) { return g.grader_id == grader; });
    if (done) continue;
    nlohmann::json verdict = nullptr;
    if (model) {
      const auto key = std::make_pair(model->entry.model_id, e.image_id);
      std::optional<ScoreResponse> cached;
      {
        std::lock_guard lock(cache_mutex_);
        if (auto it = verdicts_.find(key); it != verdicts_.end()) cached = it->second;
      }
      if (!cached) {
        try {
          cached = score_image_bytes(read_file_bytes(config_.data_dir / e.path),
                                     model->checkpoint, model->entry.model_id,
                                     config_.thresholds, config_.recapture_on_ambiguous);
          std::lock_guard lock(cache_mutex_);
          verdicts_.emplace(key, *cached);
        } catch (const Error&) {
          // Unscorable images still belong in the queue; they just carry no
          // verdict.
        }
      }
      if (cached) verdict = to_json(*cached);
    }
    items.push_back({{"image_id", e.image_id},
                     {"image_url", "/api/images/" + e.image_id},
                     {"verdict", verdict},
                     {"prior_label", nullptr}});
  }
  return items;
}

std::vector<std::uint8_t> QcService::image_bytes(const std::string& image_id,
                                                 std::string* content_type) const {
  const auto& e = entry(image_id);
  const auto path = config_.data_dir / e.path;
  if (!std::filesystem::exists(path)) throw NotFoundError("image file for " + image_id + " is missing");
  if (content_type) {
    *content_type = path.extension() == ".png" ? "image/png" : "image/x-portable-pixmap";
  }
  return read_file_bytes(path);
}

Consensus QcService::record_grade(const GradeRecord& record) {
  if (record.grader_id.empty()) throw InputError("grader_id must not be empty");
  parse_timestamp(record.timestamp);
  entry(record.image_id);
  std::lock_guard lock(grade_writer_);
  auto grades = grades_for(record.image_id, store_.load());
  bool same = false;
  for (const auto& g : latest_per_grader(grades)) {
    if (g.grader_id == record.grader_id) same = g.label == record.label;
  }
  if (!same) {
    store_.append(record);
    grades.push_back(record);
  }
  return consensus(grades, manifest_.required_graders);
}

Consensus QcService::consensus_of(const std::string& image_id) const {
  return consensus(grades_for(image_id, store_.load()), manifest_.required_graders);
}

void QcService::refresh_models() {
  std::map<std::string, ModelRegistryEntry> found;
  const auto dir = config_.data_dir / "models";
  if (std::filesystem::is_directory(dir)) {
    for (const auto& f : std::filesystem::directory_iterator(dir)) {
      if (f.path().extension() != ".fqc") continue;
      auto e = describe_checkpoint(f.path());
      found.emplace(e.model_id, std::move(e));
    }
  }
  std::lock_guard lock(registry_mutex_);
  registry_ = std::move(found);
}

std::vector<ModelRegistryEntry> QcService::models() const {
  std::lock_guard lock(registry_mutex_);
  std::vector<ModelRegistryEntry> out;
  for (const auto& [id, e] : registry_) out.push_back(e);
  return out;
}

std::optional<std::string> QcService::active_model_id() const {
  const auto model = active();
  if (!model) return std::nullopt;
  return model->entry.model_id;
}

void QcService::activate(const std::string& model_id) {
  ModelRegistryEntry e;
  {
    std::lock_guard lock(registry_mutex_);
    auto it = registry_.find(model_id);
    if (it == registry_.end()) throw NotFoundError("unknown model " + model_id);
    e = it->second;
  }
  const auto bytes = read_file_bytes(e.checkpoint_path);
  if (sha256_hex(bytes) != model_id) {
    throw ConsistencyError("checkpoint " + e.checkpoint_path.string() + " changed on disk");
  }
  auto next = std::make_shared<ActiveModel>(ActiveModel{e, decode_checkpoint(bytes)});
  const auto text = model_id + "\n";
  write_file_bytes(config_.data_dir / "active_model",
                   std::vector<std::uint8_t>(text.begin(), text.end()));
  std::lock_guard lock(active_mutex_);
  active_ = std::move(next);
}

nlohmann::json QcService::report() const {
  const auto path = config_.data_dir / "report.json";
  if (!std::filesystem::exists(path)) throw NotFoundError("no evaluation report yet");
  return nlohmann::json::parse(text_of(read_file_bytes(path)));
}

// ---------------------------------------------------------------------- HTTP

namespace {

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const std::exception& e) {
      res.status = http_status_for(e);
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  };
}

void send_json(httplib::Response& res, const nlohmann::json& j) {
  res.set_content(j.dump(), "application/json");
}

}  // namespace

void QcService::mount(httplib::Server& server) {
  server.Post("/api/score", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const auto* data = reinterpret_cast<const std::uint8_t*>(req.body.data());
                send_json(res, to_json(score({data, req.body.size()})));
              }));
  server.Get("/api/queue", guarded([this](const httplib::Request& req, httplib::Response& res) {
               if (!req.has_param("grader") || req.get_param_value("grader").empty()) {
                 throw InputError("query parameter \"grader\" is required");
               }
               std::optional<std::size_t> limit;
               if (req.has_param("limit")) {
                 try {
                   limit = std::stoul(req.get_param_value("limit"));
                 } catch (const std::exception&) {
                   throw InputError("limit must be a non-negative integer");
                 }
               }
               send_json(res, queue(req.get_param_value("grader"), limit));
             }));
  server.Get(R"(/api/images/([^/]+))",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               std::string type;
               const auto bytes = image_bytes(req.matches[1], &type);
               res.set_content(std::string(bytes.begin(), bytes.end()), type);
             }));
  server.Post("/api/grades", guarded([this](const httplib::Request& req, httplib::Response& res) {
                auto j = nlohmann::json::parse(req.body);
                if (j.is_object() && !j.contains("timestamp")) {
                  j["timestamp"] = format_timestamp(now_timestamp());
                }
                const auto record = grade_from_json(j);
                const auto c = record_grade(record);
                send_json(res, {{"image_id", record.image_id}, {"consensus", to_string(c)}});
              }));
  server.Get(R"(/api/consensus/([^/]+))",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.matches[1];
               send_json(res, {{"image_id", id}, {"consensus", to_string(consensus_of(id))}});
             }));
  server.Get("/api/models", guarded([this](const httplib::Request&, httplib::Response& res) {
               refresh_models();
               nlohmann::json list = nlohmann::json::array();
               for (const auto& m : models()) list.push_back(to_json(m));
               const auto id = active_model_id();
               send_json(res, {{"models", list},
                               {"active", id ? nlohmann::json(*id) : nlohmann::json(nullptr)}});
             }));
  server.Post(R"(/api/models/([^/]+)/activate)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                refresh_models();
                activate(req.matches[1]);
                send_json(res, {{"active", req.matches[1]}});
              }));
  server.Get("/api/report", guarded([this](const httplib::Request&, httplib::Response& res) {
               send_json(res, report());
             }));
}

}  // namespace fqc
