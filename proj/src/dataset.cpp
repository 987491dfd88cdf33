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

#include "fqc/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <unordered_set>

#include "fqc/checkpoint.hpp"
#include "fqc/errors.hpp"

namespace fqc {

std::string to_string(Label label) { return label == Label::kAccept ? "accept" : "reject"; }

std::string to_string(Consensus c) {
  switch (c) {
    case Consensus::kAccept: return "accept";
    case Consensus::kReject: return "reject";
    case Consensus::kAmbiguous: return "ambiguous";
    case Consensus::kUngraded: return "ungraded";
  }
  return "ungraded";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kUnassigned: return "unassigned";
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kExcluded: return "excluded";
  }
  return "unassigned";
}

Label parse_label(std::string_view text) {
  if (text == "accept") return Label::kAccept;
  if (text == "reject") return Label::kReject;
  throw LabelError("label must be \"accept\" or \"reject\", got \"" + std::string(text) + "\"");
}

Consensus parse_consensus(std::string_view text) {
  for (auto c : {Consensus::kAccept, Consensus::kReject, Consensus::kAmbiguous,
                 Consensus::kUngraded}) {
    if (text == to_string(c)) return c;
  }
  throw InputError("unknown consensus \"" + std::string(text) + "\"");
}

Split parse_split(std::string_view text) {
  for (auto s : {Split::kUnassigned, Split::kTrain, Split::kTest, Split::kExcluded}) {
    if (text == to_string(s)) return s;
  }
  throw InputError("unknown split \"" + std::string(text) + "\"");
}

// ---------------------------------------------------------------- timestamps

namespace {

int digits(std::string_view text, std::size_t pos, std::size_t n) {
  int v = 0;
  if (pos + n > text.size()) return -1;
  const auto r = std::from_chars(text.data() + pos, text.data() + pos + n, v);
  if (r.ec != std::errc() || r.ptr != text.data() + pos + n) return -1;
  return v;
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
  using namespace std::chrono;
  auto bad = [&] { return InputError("invalid UTC timestamp \"" + std::string(text) + "\""); };
  if (text.size() < 20 || text[4] != '-' || text[7] != '-' || text[10] != 'T' ||
      text[13] != ':' || text[16] != ':') {
    throw bad();
  }
  const int Y = digits(text, 0, 4), M = digits(text, 5, 2), D = digits(text, 8, 2);
  const int h = digits(text, 11, 2), m = digits(text, 14, 2), s = digits(text, 17, 2);
  if (Y < 0 || M < 0 || D < 0 || h < 0 || m < 0 || s < 0 || h > 23 || m > 59 || s > 60) {
    throw bad();
  }
  const year_month_day ymd{year{Y}, month{static_cast<unsigned>(M)},
                           day{static_cast<unsigned>(D)}};
  if (!ymd.ok()) throw bad();

  std::size_t pos = 19;
  std::int64_t micros = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    std::size_t n = 0;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      if (n < 6) micros = micros * 10 + (text[pos] - '0');
      ++n;
      ++pos;
    }
    if (n == 0) throw bad();
    for (; n < 6; ++n) micros *= 10;
  }
  const std::string_view zone = text.substr(pos);
  if (zone != "Z" && zone != "+00:00") throw bad();

  const auto days = sys_days(ymd).time_since_epoch().count();
  return ((static_cast<std::int64_t>(days) * 24 + h) * 60 + m) * 60'000'000LL +
         static_cast<std::int64_t>(s) * 1'000'000 + micros;
}

std::string format_timestamp(Timestamp ts) {
  using namespace std::chrono;
  const std::int64_t micros_per_day = 86'400'000'000LL;
  std::int64_t days = ts / micros_per_day;
  std::int64_t rem = ts % micros_per_day;
  if (rem < 0) {
    rem += micros_per_day;
    --days;
  }
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  const std::int64_t secs = rem / 1'000'000, micros = rem % 1'000'000;
  char buf[40];
  int n = std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld",
                        static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                        static_cast<unsigned>(ymd.day()), static_cast<long long>(secs / 3600),
                        static_cast<long long>(secs / 60 % 60),
                        static_cast<long long>(secs % 60));
  if (micros != 0) {
    n += std::snprintf(buf + n, sizeof buf - n, ".%06lld", static_cast<long long>(micros));
  }
  return std::string(buf, n) + "Z";
}

Timestamp now_timestamp() {
  using namespace std::chrono;
  return duration_cast<microseconds>(system_clock::now().time_since_epoch()).count();
}

// -------------------------------------------------------------------- grades

nlohmann::json to_json(const GradeRecord& r) {
  return {{"image_id", r.image_id},
          {"grader_id", r.grader_id},
          {"label", to_string(r.label)},
          {"timestamp", r.timestamp}};
}

GradeRecord grade_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("grade record must be a JSON object");
  auto field = [&](const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string() || it->get_ref<const std::string&>().empty()) {
      throw InputError(std::string("grade record needs a non-empty string \"") + key + "\"");
    }
    return it->get<std::string>();
  };
  GradeRecord r;
  r.image_id = field("image_id");
  r.grader_id = field("grader_id");
  r.label = parse_label(field("label"));
  r.timestamp = field("timestamp");
  parse_timestamp(r.timestamp);
  return r;
}

std::vector<GradeRecord> latest_per_grader(const std::vector<GradeRecord>& grades) {
  std::map<std::string, std::pair<Timestamp, const GradeRecord*>> latest;
  for (const auto& g : grades) {
    const Timestamp ts = parse_timestamp(g.timestamp);
    auto [it, inserted] = latest.try_emplace(g.grader_id, ts, &g);
    if (!inserted && ts >= it->second.first) it->second = {ts, &g};
  }
  std::vector<GradeRecord> out;
  out.reserve(latest.size());
  for (const auto& [id, entry] : latest) out.push_back(*entry.second);
  return out;
}

Consensus consensus(const std::vector<GradeRecord>& grades, std::size_t required_graders) {
  const auto latest = latest_per_grader(grades);
  if (latest.empty() || latest.size() < required_graders) return Consensus::kUngraded;
  const Label first = latest.front().label;
  for (const auto& g : latest) {
    if (g.label != first) return Consensus::kAmbiguous;
  }
  return first == Label::kAccept ? Consensus::kAccept : Consensus::kReject;
}

// ------------------------------------------------------------------ manifest

void DatasetManifest::add(ManifestEntry entry) {
  if (find(entry.image_id)) throw ConsistencyError("duplicate image id " + entry.image_id);
  entries.push_back(std::move(entry));
}

ManifestEntry* DatasetManifest::find(std::string_view image_id) {
  for (auto& e : entries) {
    if (e.image_id == image_id) return &e;
  }
  return nullptr;
}

const ManifestEntry* DatasetManifest::find(std::string_view image_id) const {
  return const_cast<DatasetManifest*>(this)->find(image_id);
}

void DatasetManifest::apply_grades(const std::vector<GradeRecord>& records) {
  std::map<std::string, std::vector<GradeRecord>, std::less<>> by_image;
  for (const auto& r : records) by_image[r.image_id].push_back(r);
  for (auto& e : entries) {
    auto it = by_image.find(e.image_id);
    e.grades = it == by_image.end() ? std::vector<GradeRecord>{} : it->second;
  }
  recompute_consensus();
}

void DatasetManifest::recompute_consensus() {
  for (auto& e : entries) e.consensus = consensus(e.grades, required_graders);
}

void DatasetManifest::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.image_id).second) {
      throw ConsistencyError("duplicate image id " + e.image_id);
    }
    if (e.consensus == Consensus::kAmbiguous && e.split == Split::kTrain) {
      throw ConsistencyError("ambiguous image " + e.image_id + " is in the training split");
    }
  }
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json grades = nlohmann::json::array();
    for (const auto& g : e.grades) grades.push_back(to_json(g));
    entries.push_back({{"image_id", e.image_id},
                       {"path", e.path},
                       {"grades", std::move(grades)},
                       {"consensus", to_string(e.consensus)},
                       {"split", to_string(e.split)},
                       {"ground_truth_geometry", e.geometry ? *e.geometry : nullptr}});
  }
  return {{"required_graders", m.required_graders}, {"entries", std::move(entries)}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.required_graders = j.value("required_graders", std::size_t{3});
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.image_id = e.at("image_id").get<std::string>();
      entry.path = e.at("path").get<std::string>();
      for (const auto& g : e.value("grades", nlohmann::json::array())) {
        entry.grades.push_back(grade_from_json(g));
      }
      entry.split = parse_split(e.value("split", std::string("unassigned")));
      auto geo = e.find("ground_truth_geometry");
      if (geo != e.end() && !geo->is_null()) entry.geometry = *geo;
      m.add(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed manifest: ") + e.what());
  }
  // Consensus is derived, never trusted from the file.
  m.recompute_consensus();
  m.validate();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  const std::string text = to_json(manifest).dump(2) + "\n";
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// --------------------------------------------------------------------- split

std::uint64_t split_hash(std::string_view image_id, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  auto mix = [&h](std::uint8_t byte) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  };
  for (char c : image_id) mix(static_cast<std::uint8_t>(c));
  mix(0);
  for (int i = 0; i < 8; ++i) mix(static_cast<std::uint8_t>(seed >> (8 * i)));
  // splitmix64 finalizer spreads the FNV bits.
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return h;
}

SplitResult split_dataset(const DatasetManifest& manifest, double train_fraction,
                          std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("train fraction must lie in [0, 1]");
  }
  SplitResult result{manifest, {}};
  auto& entries = result.manifest.entries;

  struct ClassPool {
    Consensus cls;
    std::size_t total = 0, in_train = 0;
    std::vector<std::pair<std::uint64_t, ManifestEntry*>> pending;
  };
  ClassPool pools[2];
  pools[0].cls = Consensus::kAccept;
  pools[1].cls = Consensus::kReject;

  for (auto& e : entries) {
    switch (e.consensus) {
      case Consensus::kUngraded:
        e.split = Split::kExcluded;
        break;
      case Consensus::kAmbiguous:
        if (e.split != Split::kExcluded) e.split = Split::kTest;
        break;
      case Consensus::kAccept:
      case Consensus::kReject: {
        auto& pool = pools[e.consensus == Consensus::kAccept ? 0 : 1];
        ++pool.total;
        if (e.split == Split::kTrain) {
          ++pool.in_train;
        } else if (e.split != Split::kTest) {
          pool.pending.emplace_back(split_hash(e.image_id, seed), &e);
        }
        break;
      }
    }
  }

  for (auto& pool : pools) {
    std::sort(pool.pending.begin(), pool.pending.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : a.second->image_id < b.second->image_id;
    });
    const auto target = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(pool.total)));
    for (auto& [hash, entry] : pool.pending) {
      if (pool.in_train < target) {
        entry->split = Split::kTrain;
        ++pool.in_train;
      } else {
        entry->split = Split::kTest;
      }
    }
    const std::string name = to_string(pool.cls);
    const std::size_t in_test = pool.total - pool.in_train;
    if (pool.total == 0) {
      result.warnings.push_back("no " + name + " images: neither split has that class");
    } else if (train_fraction > 0.0 && pool.in_train == 0) {
      result.warnings.push_back("train split has no " + name + " images");
    } else if (train_fraction < 1.0 && in_test == 0) {
      result.warnings.push_back("test split has no " + name + " images");
    }
  }
  return result;
}

// --------------------------------------------------------------- grade store

std::vector<GradeRecord> GradeStore::load() const {
  std::vector<GradeRecord> out;
  std::ifstream in(path_, std::ios::binary);
  if (!in) return out;
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  // A line without its newline is an append still in flight; readers see
  // the complete prefix only.
  text.resize(text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1);
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(grade_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path_.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void GradeStore::append(const GradeRecord& record) const {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error("cannot append to " + path_.string());
  out << to_json(record).dump() << '\n';
  out.flush();
  if (!out) throw Error("short write to " + path_.string());
}

}  // namespace fqc
