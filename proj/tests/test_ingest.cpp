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

#include <doctest.h>

#include <algorithm>
#include <random>

#include "fqc/dataset.hpp"
#include "fqc/errors.hpp"
#include "fqc/image.hpp"
#include "support/tempdir.hpp"

using fqc::Box;
using fqc::Consensus;
using fqc::GradeRecord;
using fqc::Label;
using fqc::RawImage;
using fqc::Split;

namespace {

RawImage disk_image(std::size_t size, double cx, double cy, double r) {
  RawImage img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r * r) {
        auto* p = img.at(x, y);
        p[0] = 180;
        p[1] = 90;
        p[2] = 40;
      }
    }
  return img;
}

RawImage noise_image(std::mt19937_64& rng, std::size_t w, std::size_t h) {
  RawImage img(w, h);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

GradeRecord grade(const std::string& image, const std::string& grader, Label label,
                  const std::string& ts = "2026-01-01T00:00:00Z") {
  return {image, grader, label, ts};
}

fqc::DatasetManifest graded_manifest(std::size_t n_accept, std::size_t n_reject,
                                     std::size_t n_ambiguous, const std::string& prefix = "img") {
  fqc::DatasetManifest m;
  std::size_t k = 0;
  auto add = [&](Label a, Label b) {
    fqc::ManifestEntry e;
    e.image_id = prefix + std::to_string(k++);
    e.path = e.image_id + ".ppm";
    e.grades = {grade(e.image_id, "g1", a), grade(e.image_id, "g2", a),
                grade(e.image_id, "g3", b)};
    m.add(std::move(e));
  };
  for (std::size_t i = 0; i < n_accept; ++i) add(Label::kAccept, Label::kAccept);
  for (std::size_t i = 0; i < n_reject; ++i) add(Label::kReject, Label::kReject);
  for (std::size_t i = 0; i < n_ambiguous; ++i) add(Label::kAccept, Label::kReject);
  m.recompute_consensus();
  return m;
}

std::size_t count_split(const fqc::DatasetManifest& m, Split s) {
  return std::count_if(m.entries.begin(), m.entries.end(),
                       [s](const auto& e) { return e.split == s; });
}

}  // namespace

TEST_SUITE("image codecs") {
  TEST_CASE("PPM round trip is bit exact") {
    std::mt19937_64 rng(1);
    const auto img = noise_image(rng, 17, 9);
    CHECK(fqc::decode_ppm(fqc::encode_ppm(img)) == img);
  }

  TEST_CASE("PPM header comments and errors") {
    std::string text = "P6\n# made by hand\n2 1\n255\n";
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    for (int v : {1, 2, 3, 4, 5, 6}) bytes.push_back(static_cast<std::uint8_t>(v));
    const auto img = fqc::decode_ppm(bytes);
    CHECK(img.width == 2);
    CHECK(img.at(1, 0)[2] == 6);
    bytes.pop_back();
    CHECK_THROWS_AS(fqc::decode_ppm(bytes), fqc::DecodeError);
    std::string p3 = "P3\n1 1\n255\n0 0 0\n";
    CHECK_THROWS_AS(fqc::decode_image({p3.begin(), p3.end()}), fqc::DecodeError);
    std::string deep = "P6\n1 1\n65535\n";
    CHECK_THROWS_AS(fqc::decode_ppm({deep.begin(), deep.end()}), fqc::DecodeError);
  }

  TEST_CASE("PNG round trip") {
    std::mt19937_64 rng(2);
    const auto img = noise_image(rng, 31, 20);
    const auto bytes = fqc::encode_png(img);
    CHECK(bytes[1] == 'P');
    CHECK(fqc::decode_image(bytes) == img);
    std::vector<std::uint8_t> broken(bytes.begin(), bytes.begin() + 40);
    CHECK_THROWS_AS(fqc::decode_image(broken), fqc::DecodeError);
  }

  TEST_CASE("files by extension") {
    fqc::testing::TempDir dir;
    std::mt19937_64 rng(3);
    const auto img = noise_image(rng, 8, 8);
    fqc::save_image(img, dir / "a.png");
    fqc::save_image(img, dir / "a.ppm");
    CHECK(fqc::load_image(dir / "a.png") == img);
    CHECK(fqc::load_image(dir / "a.ppm") == img);
    CHECK_THROWS_AS(fqc::load_image(dir / "missing.ppm"), fqc::NotFoundError);
  }
}

TEST_SUITE("detect_fov") {
  TEST_CASE("all black is unprocessable") {
    CHECK_THROWS_AS(fqc::detect_fov(RawImage(10, 10)), fqc::NoFundusError);
  }

  TEST_CASE("uniformly bright image is its own box") {
    RawImage img(12, 7);
    std::fill(img.pixels.begin(), img.pixels.end(), 200);
    CHECK(fqc::detect_fov(img) == Box{0, 0, 12, 7});
  }

  TEST_CASE("centered disk of radius 100") {
    const auto img = disk_image(400, 200, 200, 100);
    // Brute-force oracle: scan the generated pixels directly.
    std::size_t x0 = 400, y0 = 400, x1 = 0, y1 = 0;
    for (std::size_t y = 0; y < 400; ++y)
      for (std::size_t x = 0; x < 400; ++x)
        if (img.at(x, y)[0] > 20) {
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x + 1);
          y1 = std::max(y1, y + 1);
        }
    const auto box = fqc::detect_fov(img);
    CHECK(box == Box{x0, y0, x1, y1});
    for (auto [got, want] : {std::pair{box.x0, 100}, {box.y0, 100}, {box.x1, 300}, {box.y1, 300}}) {
      CHECK(std::abs(static_cast<long>(got) - want) <= 1);
    }
  }

  TEST_CASE("box grows as the threshold drops") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 40; ++trial) {
      auto img = noise_image(rng, 20, 15);
      for (auto& v : img.pixels) v = static_cast<std::uint8_t>(v / 2);
      const int hi = static_cast<int>(rng() % 120) + 5;
      const int lo = static_cast<int>(rng() % static_cast<unsigned>(hi));
      Box a, b;
      try {
        a = fqc::detect_fov(img, hi);
      } catch (const fqc::NoFundusError&) {
        continue;
      }
      b = fqc::detect_fov(img, lo);
      CHECK(b.x0 <= a.x0);
      CHECK(b.y0 <= a.y0);
      CHECK(b.x1 >= a.x1);
      CHECK(b.y1 >= a.y1);
    }
  }
}

TEST_SUITE("crop_resize") {
  TEST_CASE("output shape is 1x3x256x256") {
    std::mt19937_64 rng(5);
    for (auto [w, h] : {std::pair{40, 90}, {256, 256}, {700, 300}, {1, 1}}) {
      const auto img = noise_image(rng, w, h);
      const auto t = fqc::crop_resize(img, {0, 0, img.width, img.height});
      CHECK(t.shape() == fqc::Shape{1, 3, 256, 256});
    }
  }

  TEST_CASE("constant 255 maps to 0.5") {
    RawImage img(33, 21);
    std::fill(img.pixels.begin(), img.pixels.end(), 255);
    const auto t = fqc::crop_resize(img, {3, 2, 30, 20}, 64);
    for (float v : t.data()) CHECK(v == 0.5f);
  }

  TEST_CASE("values stay in [-0.5, 0.5]") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      const auto img = noise_image(rng, 30 + rng() % 50, 30 + rng() % 50);
      const std::size_t x0 = rng() % 10, y0 = rng() % 10;
      const auto t = fqc::crop_resize(img, {x0, y0, img.width - rng() % 10, img.height - rng() % 10},
                                      16 + rng() % 100);
      for (float v : t.data()) {
        CHECK(v >= -0.5f);
        CHECK(v <= 0.5f);
      }
    }
  }

  TEST_CASE("identity resize reproduces the pixels") {
    std::mt19937_64 rng(7);
    const auto img = noise_image(rng, 24, 24);
    const auto back = fqc::tensor_to_image(fqc::crop_resize(img, {0, 0, 24, 24}, 24));
    CHECK(back == img);
  }

  TEST_CASE("invalid boxes") {
    RawImage img(10, 10);
    CHECK_THROWS_AS(fqc::crop_resize(img, {4, 4, 4, 8}), fqc::InvalidBoxError);
    CHECK_THROWS_AS(fqc::crop_resize(img, {0, 0, 11, 10}), fqc::InvalidBoxError);
  }

  TEST_CASE("detect and crop twice moves the box by at most one pixel") {
    for (auto [cx, cy, r] : {std::tuple{200.0, 200.0, 100.0}, {150.0, 170.0, 140.0},
                             {260.0, 180.0, 90.5}}) {
      const auto img = disk_image(400, cx, cy, r);
      const auto once = fqc::tensor_to_image(fqc::preprocess(img));
      const auto box = fqc::detect_fov(once);
      CHECK(box.x0 <= 1);
      CHECK(box.y0 <= 1);
      CHECK(box.x1 >= 255);
      CHECK(box.y1 >= 255);
      const auto twice = fqc::tensor_to_image(fqc::crop_resize(once, box));
      CHECK(fqc::detect_fov(twice) == box);
    }
  }
}

TEST_SUITE("consensus") {
  TEST_CASE("examples") {
    using enum Label;
    CHECK(fqc::consensus({grade("i", "a", kAccept), grade("i", "b", kAccept),
                          grade("i", "c", kAccept)}) == Consensus::kAccept);
    CHECK(fqc::consensus({grade("i", "a", kReject), grade("i", "b", kReject),
                          grade("i", "c", kReject)}) == Consensus::kReject);
    CHECK(fqc::consensus({grade("i", "a", kAccept), grade("i", "b", kAccept),
                          grade("i", "c", kReject)}) == Consensus::kAmbiguous);
    CHECK(fqc::consensus({grade("i", "a", kAccept), grade("i", "b", kAccept)}) ==
          Consensus::kUngraded);
    CHECK(fqc::consensus({}) == Consensus::kUngraded);
    CHECK(fqc::consensus({grade("i", "a", kAccept), grade("i", "b", kAccept)}, 2) ==
          Consensus::kAccept);
  }

  TEST_CASE("a grader's latest grade wins") {
    using enum Label;
    std::vector<GradeRecord> g = {grade("i", "a", kReject, "2026-01-02T00:00:00Z"),
                                  grade("i", "a", kAccept, "2026-01-01T00:00:00Z"),
                                  grade("i", "b", kReject), grade("i", "c", kReject)};
    CHECK(fqc::consensus(g) == Consensus::kReject);
    // Three records from one grader count as one grader.
    std::vector<GradeRecord> same = {grade("i", "a", kAccept), grade("i", "a", kAccept),
                                     grade("i", "a", kAccept)};
    CHECK(fqc::consensus(same) == Consensus::kUngraded);
  }

  TEST_CASE("invariant under permutation") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<GradeRecord> g;
      const std::size_t n = rng() % 7;
      for (std::size_t i = 0; i < n; ++i) {
        g.push_back(grade("i", "g" + std::to_string(rng() % 4), rng() % 2 ? Label::kAccept : Label::kReject,
                          "2026-01-0" + std::to_string(1 + rng() % 9) + "T00:00:00Z"));
      }
      // Equal timestamps from one grader would make order matter; keep them distinct.
      std::sort(g.begin(), g.end(), [](const auto& a, const auto& b) {
        return std::tie(a.grader_id, a.timestamp) < std::tie(b.grader_id, b.timestamp);
      });
      g.erase(std::unique(g.begin(), g.end(),
                          [](const auto& a, const auto& b) {
                            return a.grader_id == b.grader_id && a.timestamp == b.timestamp;
                          }),
              g.end());
      const auto expected = fqc::consensus(g);
      std::shuffle(g.begin(), g.end(), rng);
      CHECK(fqc::consensus(g) == expected);
    }
  }
}

TEST_SUITE("timestamps") {
  TEST_CASE("parse and format") {
    CHECK(fqc::parse_timestamp("1970-01-01T00:00:00Z") == 0);
    CHECK(fqc::parse_timestamp("1970-01-02T00:00:01.5Z") == 86'401'500'000LL);
    CHECK(fqc::parse_timestamp("2026-03-04T05:06:07+00:00") ==
          fqc::parse_timestamp("2026-03-04T05:06:07Z"));
    CHECK(fqc::format_timestamp(fqc::parse_timestamp("2026-03-04T05:06:07Z")) ==
          "2026-03-04T05:06:07Z");
    CHECK(fqc::format_timestamp(fqc::parse_timestamp("2024-02-29T23:59:59.000250Z")) ==
          "2024-02-29T23:59:59.000250Z");
    for (const char* bad : {"2026-13-01T00:00:00Z", "2026-01-01 00:00:00Z",
                            "2026-01-01T00:00:00", "2026-01-01T00:00:00+02:00", "yesterday"}) {
      CHECK_THROWS_AS(fqc::parse_timestamp(bad), fqc::InputError);
    }
  }
}

TEST_SUITE("split") {
  TEST_CASE("100 entries at one half split evenly") {
    const auto r = fqc::split_dataset(graded_manifest(60, 40, 0), 0.5, 1);
    CHECK(count_split(r.manifest, Split::kTrain) == 50);
    CHECK(count_split(r.manifest, Split::kTest) == 50);
    CHECK(r.warnings.empty());
  }

  TEST_CASE("stratified per class") {
    const auto r = fqc::split_dataset(graded_manifest(90, 10, 0), 0.5, 3);
    std::size_t reject_train = 0;
    for (const auto& e : r.manifest.entries)
      reject_train += e.consensus == Consensus::kReject && e.split == Split::kTrain;
    CHECK(reject_train == 5);
  }

  TEST_CASE("ambiguous entries never train, ungraded are excluded") {
    auto m = graded_manifest(10, 10, 7);
    fqc::ManifestEntry lone;
    lone.image_id = "lonely";
    lone.path = "lonely.ppm";
    m.add(lone);
    m.recompute_consensus();
    const auto r = fqc::split_dataset(m, 1.0, 5);
    for (const auto& e : r.manifest.entries) {
      if (e.consensus == Consensus::kAmbiguous) CHECK(e.split == Split::kTest);
      if (e.consensus == Consensus::kUngraded) CHECK(e.split == Split::kExcluded);
    }
    CHECK_NOTHROW(r.manifest.validate());
  }

  TEST_CASE("same seed, same assignment; other seed differs") {
    const auto m = graded_manifest(40, 40, 5);
    const auto a = fqc::split_dataset(m, 0.5, 9).manifest;
    const auto b = fqc::split_dataset(m, 0.5, 9).manifest;
    const auto c = fqc::split_dataset(m, 0.5, 10).manifest;
    bool differs = false;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      CHECK(a.entries[i].split == b.entries[i].split);
      differs = differs || a.entries[i].split != c.entries[i].split;
    }
    CHECK(differs);
  }

  TEST_CASE("ingestion order does not matter") {
    auto m = graded_manifest(30, 30, 0);
    auto shuffled = m;
    std::mt19937_64 rng(11);
    std::shuffle(shuffled.entries.begin(), shuffled.entries.end(), rng);
    const auto a = fqc::split_dataset(m, 0.5, 4).manifest;
    const auto b = fqc::split_dataset(shuffled, 0.5, 4).manifest;
    for (const auto& e : a.entries) CHECK(b.find(e.image_id)->split == e.split);
  }

  TEST_CASE("adding an image never moves existing ones") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      auto base = fqc::split_dataset(graded_manifest(20 + rng() % 20, 10 + rng() % 10, 3), 0.5,
                                     trial)
                      .manifest;
      auto grown = base;
      for (const auto& e : graded_manifest(1 + rng() % 5, rng() % 3, 1, "new").entries) {
        grown.add(e);
      }
      const auto r = fqc::split_dataset(grown, 0.5, trial).manifest;
      for (const auto& e : base.entries) CHECK(r.find(e.image_id)->split == e.split);
    }
  }

  TEST_CASE("a missing class is a warning, not an error") {
    const auto r = fqc::split_dataset(graded_manifest(10, 0, 0), 0.5, 1);
    CHECK(r.warnings.size() == 1);
    const auto single = fqc::split_dataset(graded_manifest(10, 1, 0), 0.5, 1);
    CHECK(single.warnings.size() == 1);
  }

  TEST_CASE("fraction out of range") {
    CHECK_THROWS_AS(fqc::split_dataset(graded_manifest(2, 2, 0), 1.5, 1), fqc::ConfigError);
  }
}

TEST_SUITE("manifest and grade store") {
  TEST_CASE("manifest JSON round trip recomputes consensus") {
    fqc::testing::TempDir dir;
    auto m = fqc::split_dataset(graded_manifest(3, 2, 2), 0.5, 1).manifest;
    m.entries[0].geometry = nlohmann::json{{"disc_x", 0.3}};
    fqc::save_manifest(m, dir / "manifest.json");
    const auto back = fqc::load_manifest(dir / "manifest.json");
    REQUIRE(back.entries.size() == m.entries.size());
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      CHECK(back.entries[i].image_id == m.entries[i].image_id);
      CHECK(back.entries[i].consensus == m.entries[i].consensus);
      CHECK(back.entries[i].split == m.entries[i].split);
      CHECK(back.entries[i].grades == m.entries[i].grades);
    }
    CHECK(back.entries[0].geometry->at("disc_x") == 0.3);
  }

  TEST_CASE("manifest rejects duplicates and ambiguous training images") {
    auto j = fqc::to_json(graded_manifest(1, 0, 1));
    auto dup = j;
    dup["entries"].push_back(dup["entries"][0]);
    CHECK_THROWS_AS(fqc::manifest_from_json(dup), fqc::ConsistencyError);
    j["entries"][1]["split"] = "train";
    CHECK_THROWS_AS(fqc::manifest_from_json(j), fqc::ConsistencyError);
  }

  TEST_CASE("grade store appends and reloads in order") {
    fqc::testing::TempDir dir;
    fqc::GradeStore store(dir / "grades.jsonl");
    CHECK(store.load().empty());
    const auto a = grade("x", "g1", Label::kAccept, "2026-01-01T00:00:00Z");
    const auto b = grade("x", "g1", Label::kReject, "2026-01-01T00:00:01Z");
    store.append(a);
    store.append(b);
    CHECK(store.load() == std::vector<GradeRecord>{a, b});

    fqc::DatasetManifest m;
    m.add({"x", "x.ppm", {}, Consensus::kUngraded, Split::kUnassigned, std::nullopt});
    m.apply_grades(store.load());
    CHECK(m.entries[0].grades.size() == 2);
    CHECK(m.entries[0].consensus == Consensus::kUngraded);
  }

  TEST_CASE("malformed grade records") {
    CHECK_THROWS_AS(fqc::grade_from_json({{"image_id", "x"}}), fqc::InputError);
    CHECK_THROWS_AS(fqc::grade_from_json({{"image_id", "x"}, {"grader_id", "g"},
                                          {"label", "maybe"}, {"timestamp", "2026-01-01T00:00:00Z"}}),
                    fqc::LabelError);
  }
}
