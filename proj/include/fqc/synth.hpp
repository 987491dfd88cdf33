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

// Synthetic fundus images with known geometry, graded by an executable
// encoding of the UK screening quality rules.
//
// Distances are in disc diameters (DD). "Edge" means the nearest border of
// the image rectangle. The disc-to-edge distance is measured to the rim of
// the complete disc, i.e. center distance minus half a disc diameter.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "fqc/dataset.hpp"
#include "fqc/image.hpp"

namespace fqc {

enum class FieldType { kMacula, kDisc };
enum class QualityGrade { kGood, kAdequate, kInadequate };

std::string to_string(FieldType field);
std::string to_string(QualityGrade grade);
FieldType parse_field_type(std::string_view text);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct Degradation {
  double blur_sigma = 0.0;
  double brightness_scale = 1.0;
  double contrast_scale = 1.0;
};

struct SynthSpec {
  std::size_t side = 256;
  FieldType field = FieldType::kMacula;
  double disc_diameter_px = 32.0;
  Point disc_center{96.0, 128.0};
  Point fovea_center{128.0, 128.0};
  double vessel_visibility_global = 1.0;
  double vessel_visibility_near_fovea = 1.0;
  bool fine_vessels_on_disc = true;
  Degradation degradation;

  /// ConfigError on out-of-range fields.
  void validate() const;
};

/// The quantities the quality rules read. Only the fields the field type
/// needs must be present.
struct RuleInputs {
  FieldType field = FieldType::kMacula;
  std::optional<double> fovea_to_center_dd;
  std::optional<double> fovea_to_edge_dd;
  std::optional<double> disc_to_center_dd;
  std::optional<double> disc_to_edge_dd;
  std::optional<double> visibility_global;
  std::optional<double> visibility_near_fovea;
  std::optional<bool> fine_vessels_on_disc;
};

/// Good is tested first, then adequate, else inadequate. Vessels count as
/// visible when the fraction exceeds 0.9. InputError when a needed field is
/// missing.
QualityGrade rule_grade(const RuleInputs& in);

inline Label class_of(QualityGrade g) {
  return g == QualityGrade::kInadequate ? Label::kReject : Label::kAccept;
}

struct GroundTruth {
  SynthSpec spec;
  double fovea_to_center_dd = 0.0;
  double fovea_to_edge_dd = 0.0;
  double disc_to_center_dd = 0.0;
  double disc_to_edge_dd = 0.0;
  /// Visibility fractions measured on the rendered vessel mask.
  double realized_visibility_global = 0.0;
  double realized_visibility_near_fovea = 0.0;
  QualityGrade grade = QualityGrade::kInadequate;
  Label label = Label::kReject;

  RuleInputs rule_inputs() const;
};

/// Geometry of `spec` in DD. Visibility and grade are left for the caller.
GroundTruth measure_geometry(const SynthSpec& spec);

nlohmann::json to_json(const SynthSpec& spec);
nlohmann::json to_json(const GroundTruth& truth);

/// Float RGB image in [0, 255] with its field-of-view mask.
struct Canvas {
  std::size_t side = 0;
  std::vector<float> rgb;         // 3 * side * side, interleaved
  std::vector<std::uint8_t> fov;  // side * side, 1 inside the fundus field
};

struct Rendered {
  Canvas canvas;
  double visibility_global = 0.0;
  double visibility_near_fovea = 0.0;
};

/// Draws the undegraded image. GenerationError when the requested
/// visibility fractions cannot be realized within 0.05.
Rendered render_fundus(const SynthSpec& spec, std::uint64_t seed);

/// Blur, then brightness, then contrast (about the field-of-view mean).
void apply_degradations(Canvas& canvas, const Degradation& d);

RawImage quantize(const Canvas& canvas);

struct Generated {
  RawImage image;
  GroundTruth truth;
};

/// Render, degrade, quantize and grade. Deterministic in (spec, seed).
Generated generate_fundus(const SynthSpec& spec, std::uint64_t seed);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double sample(std::mt19937_64& rng) const;
};

/// Prior over specs for one class. The rule oracle has the final word;
/// samples it disagrees with are redrawn.
struct ClassProfile {
  Range visibility_global;
  Range visibility_near_fovea;
  Range center_offset_dd;  // distance of the centered structure from image center
  double fine_vessels_probability = 1.0;
  Range blur_sigma;
  Range brightness;
  Range contrast;
};

struct SynthOptions {
  std::size_t side = 256;
  double macula_fraction = 0.8;
  Range disc_diameter_fraction{0.11, 0.14};  // of the image side
  ClassProfile accept = default_accept_profile();
  ClassProfile reject = default_reject_profile();
  ClassProfile ambiguous = default_ambiguous_profile();
  std::size_t max_attempts = 500;

  static ClassProfile default_accept_profile();
  static ClassProfile default_reject_profile();
  static ClassProfile default_ambiguous_profile();
};

/// Draws a spec whose rule grade maps to `target`. GenerationError after
/// `max_attempts` misses.
Generated sample_class(Label target, const SynthOptions& options, std::uint64_t seed);

/// Draws a spec sitting within 5% of a quality threshold that separates
/// accept from reject.
Generated sample_borderline(const SynthOptions& options, std::uint64_t seed);

struct ClassCounts {
  std::size_t accept = 0;
  std::size_t reject = 0;
  std::size_t ambiguous = 0;
};

/// About 4% reject and 2% ambiguous out of `total`, the rest accept.
ClassCounts default_class_counts(std::size_t total);

/// Writes images/<id>.ppm and images/<id>.truth.json under `out_dir` and
/// returns a manifest whose paths are relative to `out_dir`. Every image
/// carries three unanimous synthetic grades.
DatasetManifest build_synth_dataset(std::size_t n_accept, std::size_t n_reject,
                                    std::uint64_t seed, const std::filesystem::path& out_dir,
                                    const SynthOptions& options = {});

/// Adds `k` borderline images with split 2-1 votes, so their consensus is
/// ambiguous.
DatasetManifest make_ambiguous_variants(const DatasetManifest& manifest, std::size_t k,
                                        std::uint64_t seed, const std::filesystem::path& out_dir,
                                        const SynthOptions& options = {});

/// Timestamp used for every synthetic grade, fixed for reproducibility.
inline constexpr const char* kSynthGradeTime = "2026-01-01T00:00:00Z";

}  // namespace fqc
