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

#include <cmath>
#include <random>

#include "fqc/checkpoint.hpp"
#include "fqc/errors.hpp"
#include "fqc/synth.hpp"
#include "support/tempdir.hpp"

using namespace fqc;
using fqc::testing::TempDir;

namespace {

RuleInputs macula(double to_center, double to_edge, double near, double global) {
  RuleInputs in;
  in.field = FieldType::kMacula;
  in.fovea_to_center_dd = to_center;
  in.fovea_to_edge_dd = to_edge;
  in.visibility_near_fovea = near;
  in.visibility_global = global;
  return in;
}

RuleInputs random_inputs(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RuleInputs in;
  in.field = u(rng) < 0.5 ? FieldType::kMacula : FieldType::kDisc;
  in.fovea_to_center_dd = 3 * u(rng);
  in.fovea_to_edge_dd = 4 * u(rng);
  in.disc_to_center_dd = 3 * u(rng);
  in.disc_to_edge_dd = 4 * u(rng);
  // Mass near the 0.9 cutoff so the property sees both sides of it.
  in.visibility_global = u(rng) < 0.5 ? u(rng) : 0.85 + 0.1 * u(rng);
  in.visibility_near_fovea = u(rng) < 0.5 ? u(rng) : 0.85 + 0.1 * u(rng);
  in.fine_vessels_on_disc = u(rng) < 0.7;
  return in;
}

// good > adequate > inadequate
int rank(QualityGrade g) {
  return g == QualityGrade::kGood ? 2 : g == QualityGrade::kAdequate ? 1 : 0;
}

SynthSpec small_spec() {
  SynthSpec s;
  s.side = 96;
  s.disc_diameter_px = 12;
  s.fovea_center = {48, 48};
  s.disc_center = {78, 48};
  s.vessel_visibility_global = 0.95;
  s.vessel_visibility_near_fovea = 0.95;
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  const auto bytes = read_file_bytes(p);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

TEST_CASE("rule_grade: tabulated macula examples") {
  CHECK(rule_grade(macula(0.5, 3.0, 0.95, 0.95)) == QualityGrade::kGood);
  CHECK(rule_grade(macula(2.0, 2.5, 0.95, 0.6)) == QualityGrade::kAdequate);
  CHECK(rule_grade(macula(3.0, 1.0, 0.95, 0.95)) == QualityGrade::kInadequate);
}

TEST_CASE("rule_grade: boundaries") {
  // <= 1 DD is inclusive, > 0.9 and > 2 DD are strict.
  CHECK(rule_grade(macula(1.0, 3.0, 0.95, 0.95)) == QualityGrade::kGood);
  CHECK(rule_grade(macula(1.0, 3.0, 0.95, 0.9)) == QualityGrade::kAdequate);
  CHECK(rule_grade(macula(1.5, 2.0, 0.95, 0.95)) == QualityGrade::kInadequate);
  CHECK(rule_grade(macula(0.0, 3.0, 0.9, 1.0)) == QualityGrade::kInadequate);

  RuleInputs disc;
  disc.field = FieldType::kDisc;
  disc.disc_to_center_dd = 0.5;
  disc.disc_to_edge_dd = 2.5;
  disc.visibility_global = 0.95;
  disc.fine_vessels_on_disc = true;
  CHECK(rule_grade(disc) == QualityGrade::kGood);
  disc.visibility_global = 0.5;
  CHECK(rule_grade(disc) == QualityGrade::kAdequate);
  disc.fine_vessels_on_disc = false;
  CHECK(rule_grade(disc) == QualityGrade::kInadequate);
}

TEST_CASE("rule_grade: missing inputs") {
  RuleInputs in = macula(0.5, 3.0, 0.95, 0.95);
  in.visibility_near_fovea.reset();
  CHECK_THROWS_AS(rule_grade(in), InputError);
  RuleInputs disc;
  disc.field = FieldType::kDisc;
  disc.visibility_global = 1.0;
  disc.disc_to_center_dd = 0.0;
  disc.disc_to_edge_dd = 3.0;
  CHECK_THROWS_AS(rule_grade(disc), InputError);
  // A macula image does not need the disc fields.
  CHECK_NOTHROW(rule_grade(macula(0.5, 3.0, 0.95, 0.95)));
}

TEST_CASE("rule_grade: monotone in visibility over 1000 random inputs") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const RuleInputs base = random_inputs(rng);
    RuleInputs raised = base;
    raised.visibility_global = *base.visibility_global + (1 - *base.visibility_global) * u(rng);
    raised.visibility_near_fovea =
        *base.visibility_near_fovea + (1 - *base.visibility_near_fovea) * u(rng);
    if (u(rng) < 0.5) raised.fine_vessels_on_disc = true;
    CHECK(rank(rule_grade(raised)) >= rank(rule_grade(base)));
  }
}

TEST_CASE("rule_grade: ignores inputs outside its field type") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const RuleInputs base = random_inputs(rng);
    RuleInputs other = base;
    std::uniform_real_distribution<double> u(0.0, 4.0);
    if (base.field == FieldType::kMacula) {
      other.disc_to_center_dd = u(rng);
      other.disc_to_edge_dd = u(rng);
      other.fine_vessels_on_disc = !*base.fine_vessels_on_disc;
    } else {
      other.fovea_to_center_dd = u(rng);
      other.fovea_to_edge_dd = u(rng);
      other.visibility_near_fovea = u(rng) / 4;
    }
    CHECK(rule_grade(other) == rule_grade(base));
  }
}

TEST_CASE("class_of maps good and adequate to accept") {
  CHECK(class_of(QualityGrade::kGood) == Label::kAccept);
  CHECK(class_of(QualityGrade::kAdequate) == Label::kAccept);
  CHECK(class_of(QualityGrade::kInadequate) == Label::kReject);
}

TEST_CASE("measure_geometry: distances from pixel geometry") {
  SynthSpec s;
  s.side = 200;
  s.disc_diameter_px = 20;
  s.fovea_center = {130, 100};
  s.disc_center = {70, 40};
  const auto g = measure_geometry(s);
  CHECK(g.fovea_to_center_dd == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(g.fovea_to_edge_dd == doctest::Approx(3.5).epsilon(1e-12));
  CHECK(g.disc_to_center_dd == doctest::Approx(std::hypot(30.0, 60.0) / 20).epsilon(1e-12));
  CHECK(g.disc_to_edge_dd == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("spec validation") {
  SynthSpec s = small_spec();
  CHECK_NOTHROW(s.validate());
  s.fovea_center = {-1, 10};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec();
  s.vessel_visibility_global = 1.2;
  CHECK_THROWS_AS(generate_fundus(s, 1), ConfigError);
  s = small_spec();
  s.degradation.brightness_scale = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec();
  s.degradation.blur_sigma = -1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("generate_fundus: realized visibility within 0.05 and grade from rule") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    SynthSpec s = small_spec();
    s.vessel_visibility_near_fovea = u(rng);
    s.vessel_visibility_global = 0.1 + 0.8 * u(rng);
    try {
      const auto g = generate_fundus(s, trial);
      CHECK(std::abs(g.truth.realized_visibility_global - s.vessel_visibility_global) <= 0.05);
      CHECK(std::abs(g.truth.realized_visibility_near_fovea - s.vessel_visibility_near_fovea) <=
            0.05);
      CHECK(g.truth.grade == rule_grade(g.truth.rule_inputs()));
      CHECK(g.truth.label == class_of(g.truth.grade));
    } catch (const GenerationError&) {
      // Some pairs are unrealizable (the fovea region is part of the whole).
    }
  }
}

TEST_CASE("generate_fundus: unrealizable visibility pair") {
  SynthSpec s = small_spec();
  s.vessel_visibility_near_fovea = 1.0;
  s.vessel_visibility_global = 0.0;
  CHECK_THROWS_AS(render_fundus(s, 1), GenerationError);
}

TEST_CASE("generate_fundus: bit-identical for the same seed") {
  const auto a = generate_fundus(small_spec(), 11);
  const auto b = generate_fundus(small_spec(), 11);
  const auto c = generate_fundus(small_spec(), 12);
  CHECK(a.image.pixels == b.image.pixels);
  CHECK(a.image.pixels != c.image.pixels);
}

TEST_CASE("generate_fundus: black outside the field, bright disc, dark fovea") {
  SynthSpec s = small_spec();
  s.vessel_visibility_global = 1.0;
  s.vessel_visibility_near_fovea = 1.0;
  const auto g = generate_fundus(s, 5);
  CHECK(g.image.at(0, 0)[0] == 0);
  const auto* disc = g.image.at(78, 48);
  const auto* fovea = g.image.at(48, 48);
  CHECK(disc[1] > fovea[1] + 40);
  CHECK(fovea[0] > fovea[2]);  // orange-red
}

TEST_CASE("apply_degradations: neutral parameters are the identity") {
  auto r = render_fundus(small_spec(), 9);
  const auto before = r.canvas.rgb;
  apply_degradations(r.canvas, Degradation{});
  CHECK(r.canvas.rgb == before);
}

TEST_CASE("apply_degradations: brightness scales, contrast keeps the mean") {
  auto r = render_fundus(small_spec(), 9);
  Canvas bright = r.canvas;
  apply_degradations(bright, {0.0, 0.5, 1.0});
  for (std::size_t i = 0; i < bright.rgb.size(); i += 97) {
    CHECK(bright.rgb[i] == doctest::Approx(0.5 * r.canvas.rgb[i]).epsilon(1e-5));
  }
  auto fov_mean = [](const Canvas& c) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < c.fov.size(); ++i)
      if (c.fov[i]) {
        sum += c.rgb[3 * i];
        ++n;
      }
    return sum / static_cast<double>(n);
  };
  Canvas flat = r.canvas;
  apply_degradations(flat, {0.0, 1.0, 0.3});
  CHECK(fov_mean(flat) == doctest::Approx(fov_mean(r.canvas)).epsilon(1e-4));
  CHECK(flat.rgb[0] == r.canvas.rgb[0]);  // outside the field untouched
}

TEST_CASE("apply_degradations: blur preserves a constant image and smooths a step") {
  Canvas c;
  c.side = 16;
  c.rgb.assign(3 * 256, 100.0f);
  c.fov.assign(256, 1);
  apply_degradations(c, {2.0, 1.0, 1.0});
  for (float v : c.rgb) CHECK(v == doctest::Approx(100.0f).epsilon(1e-5));
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 8; x < 16; ++x)
      for (int ch = 0; ch < 3; ++ch) c.rgb[3 * (y * 16 + x) + ch] = 200.0f;
  apply_degradations(c, {1.5, 1.0, 1.0});
  const float left = c.rgb[3 * (8 * 16 + 6)], right = c.rgb[3 * (8 * 16 + 9)];
  CHECK(left > 100.0f);
  CHECK(right < 200.0f);
  CHECK(left < right);
}

TEST_CASE("sample_class returns the requested class") {
  SynthOptions o;
  o.side = 96;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CHECK(sample_class(Label::kAccept, o, seed).truth.label == Label::kAccept);
    CHECK(sample_class(Label::kReject, o, seed).truth.label == Label::kReject);
  }
}

TEST_CASE("sample_class: impossible profile is a generation error") {
  SynthOptions o;
  o.side = 96;
  o.max_attempts = 20;
  // Perfect visibility, centered, fine vessels: never inadequate.
  o.reject = o.accept;
  o.reject.visibility_global = {1.0, 1.0};
  o.reject.visibility_near_fovea = {1.0, 1.0};
  o.reject.center_offset_dd = {0.0, 0.0};
  o.reject.fine_vessels_probability = 1.0;
  CHECK_THROWS_AS(sample_class(Label::kReject, o, 1), GenerationError);
}

TEST_CASE("sample_borderline sits within 5% of an accept/reject threshold") {
  SynthOptions o;
  o.side = 128;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const auto t = sample_borderline(o, seed).truth;
    const bool near_visibility = t.spec.field == FieldType::kMacula &&
                                 t.realized_visibility_near_fovea >= 0.855 &&
                                 t.realized_visibility_near_fovea <= 0.945;
    const double edge =
        t.spec.field == FieldType::kMacula ? t.fovea_to_edge_dd : t.disc_to_edge_dd;
    const bool near_edge = edge >= 1.9 && edge <= 2.1;
    CHECK((near_visibility || near_edge));
  }
}

TEST_CASE("default class counts") {
  const auto c = default_class_counts(800);
  CHECK(c.accept == 752);
  CHECK(c.reject == 32);
  CHECK(c.ambiguous == 16);
  const auto z = default_class_counts(0);
  CHECK(z.accept + z.reject + z.ambiguous == 0);
}

TEST_CASE("build_synth_dataset: counts, files and oracle agreement") {
  TempDir dir("synth");
  SynthOptions o;
  o.side = 64;
  const auto m = build_synth_dataset(10, 10, 5, dir.path(), o);
  REQUIRE(m.entries.size() == 20);
  std::size_t accepts = 0, rejects = 0;
  for (const auto& e : m.entries) {
    REQUIRE(e.geometry.has_value());
    const auto truth = *e.geometry;
    CHECK(to_string(e.consensus) == truth["class"].get<std::string>());
    (e.consensus == Consensus::kAccept ? accepts : rejects) += 1;
    CHECK(e.grades.size() == 3);
    CHECK(std::filesystem::exists(dir.path() / e.path));
    CHECK(std::filesystem::exists(dir.path() / "images" / (e.image_id + ".truth.json")));
    const auto img = load_image(dir.path() / e.path);
    CHECK(img.width == 64);
    // The sidecar holds the same truth as the manifest.
    CHECK(nlohmann::json::parse(slurp(dir.path() / "images" / (e.image_id + ".truth.json"))) ==
          truth);
  }
  CHECK(accepts == 10);
  CHECK(rejects == 10);
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("build_synth_dataset: deterministic manifest and image bytes") {
  TempDir a("synth-a"), b("synth-b");
  SynthOptions o;
  o.side = 64;
  const auto ma = build_synth_dataset(4, 3, 9, a.path(), o);
  const auto mb = build_synth_dataset(4, 3, 9, b.path(), o);
  CHECK(to_json(ma).dump() == to_json(mb).dump());
  for (const auto& e : ma.entries) {
    CHECK(read_file_bytes(a.path() / e.path) == read_file_bytes(b.path() / e.path));
  }
}

TEST_CASE("build_synth_dataset: zero counts") {
  TempDir dir("synth");
  CHECK(build_synth_dataset(0, 0, 1, dir.path()).entries.empty());
}

TEST_CASE("make_ambiguous_variants") {
  TempDir dir("synth");
  SynthOptions o;
  o.side = 96;
  const auto base = build_synth_dataset(3, 2, 2, dir.path(), o);

  SUBCASE("k = 0 leaves the manifest unchanged") {
    CHECK(to_json(make_ambiguous_variants(base, 0, 4, dir.path(), o)).dump() ==
          to_json(base).dump());
  }
  SUBCASE("every new entry is ambiguous with a 2-1 vote") {
    const auto m = make_ambiguous_variants(base, 4, 4, dir.path(), o);
    REQUIRE(m.entries.size() == base.entries.size() + 4);
    for (std::size_t i = base.entries.size(); i < m.entries.size(); ++i) {
      const auto& e = m.entries[i];
      CHECK(e.consensus == Consensus::kAmbiguous);
      REQUIRE(e.grades.size() == 3);
      int accepts = 0;
      for (const auto& g : e.grades) accepts += g.label == Label::kAccept;
      CHECK((accepts == 1 || accepts == 2));
      // The majority matches the rule class.
      const bool rule_accept = (*e.geometry)["class"] == "accept";
      CHECK((accepts == 2) == rule_accept);
    }
    for (std::size_t i = 0; i < base.entries.size(); ++i) {
      CHECK(m.entries[i].consensus == base.entries[i].consensus);
    }
  }
}
