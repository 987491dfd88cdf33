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

#include "fqc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>

#include "fqc/checkpoint.hpp"
#include "fqc/errors.hpp"

namespace fqc {

std::string to_string(FieldType field) {
  return field == FieldType::kMacula ? "macula_centered" : "disc_centered";
}

std::string to_string(QualityGrade grade) {
  switch (grade) {
    case QualityGrade::kGood: return "good";
    case QualityGrade::kAdequate: return "adequate";
    case QualityGrade::kInadequate: return "inadequate";
  }
  return "inadequate";
}

FieldType parse_field_type(std::string_view text) {
  if (text == "macula_centered") return FieldType::kMacula;
  if (text == "disc_centered") return FieldType::kDisc;
  throw InputError("unknown field type \"" + std::string(text) + "\"");
}

namespace {

constexpr double kVisibleCutoff = 0.9;
constexpr double kDiscFoveaDistanceDd = 2.5;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix(splitmix(seed ^ (stream * 0xd1b54a32d192ed03ULL)) + index);
}

bool finite_in(double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; }

double dist(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

double edge_distance(Point p, double side) {
  return std::min({p.x, p.y, side - p.x, side - p.y});
}

template <typename T>
T need(const std::optional<T>& v, const char* name) {
  if (!v) throw InputError(std::string("rule input \"") + name + "\" is missing");
  return *v;
}

}  // namespace

void SynthSpec::validate() const {
  const double s = static_cast<double>(side);
  if (side < 32 || side > 4096) throw ConfigError("image side must lie in [32, 4096]");
  if (!finite_in(disc_diameter_px, 1.0, s / 2)) {
    throw ConfigError("disc diameter must lie in [1, side/2] px");
  }
  for (Point p : {disc_center, fovea_center}) {
    if (!finite_in(p.x, 0, s) || !finite_in(p.y, 0, s)) {
      throw ConfigError("disc and fovea centers must lie inside the image");
    }
  }
  if (!finite_in(vessel_visibility_global, 0, 1) || !finite_in(vessel_visibility_near_fovea, 0, 1)) {
    throw ConfigError("visibility fractions must lie in [0, 1]");
  }
  if (!finite_in(degradation.blur_sigma, 0, 64) || !(degradation.brightness_scale > 0) ||
      !(degradation.contrast_scale > 0) || !std::isfinite(degradation.brightness_scale) ||
      !std::isfinite(degradation.contrast_scale)) {
    throw ConfigError("degradations need blur >= 0, brightness > 0 and contrast > 0");
  }
}

QualityGrade rule_grade(const RuleInputs& in) {
  const double global = need(in.visibility_global, "visibility_global");
  if (in.field == FieldType::kMacula) {
    const double to_center = need(in.fovea_to_center_dd, "fovea_to_center_dd");
    const double to_edge = need(in.fovea_to_edge_dd, "fovea_to_edge_dd");
    const double near = need(in.visibility_near_fovea, "visibility_near_fovea");
    if (to_center <= 1.0 && near > kVisibleCutoff && global > kVisibleCutoff) {
      return QualityGrade::kGood;
    }
    if (to_edge > 2.0 && near > kVisibleCutoff) return QualityGrade::kAdequate;
    return QualityGrade::kInadequate;
  }
  const double to_center = need(in.disc_to_center_dd, "disc_to_center_dd");
  const double to_edge = need(in.disc_to_edge_dd, "disc_to_edge_dd");
  const bool fine = need(in.fine_vessels_on_disc, "fine_vessels_on_disc");
  if (to_center <= 1.0 && fine && global > kVisibleCutoff) return QualityGrade::kGood;
  if (to_edge > 2.0 && fine) return QualityGrade::kAdequate;
  return QualityGrade::kInadequate;
}

RuleInputs GroundTruth::rule_inputs() const {
  RuleInputs in;
  in.field = spec.field;
  in.fovea_to_center_dd = fovea_to_center_dd;
  in.fovea_to_edge_dd = fovea_to_edge_dd;
  in.disc_to_center_dd = disc_to_center_dd;
  in.disc_to_edge_dd = disc_to_edge_dd;
  in.visibility_global = realized_visibility_global;
  in.visibility_near_fovea = realized_visibility_near_fovea;
  in.fine_vessels_on_disc = spec.fine_vessels_on_disc;
  return in;
}

GroundTruth measure_geometry(const SynthSpec& spec) {
  spec.validate();
  const double s = static_cast<double>(spec.side);
  const double dd = spec.disc_diameter_px;
  const Point center{s / 2, s / 2};
  GroundTruth gt;
  gt.spec = spec;
  gt.fovea_to_center_dd = dist(spec.fovea_center, center) / dd;
  gt.fovea_to_edge_dd = edge_distance(spec.fovea_center, s) / dd;
  gt.disc_to_center_dd = dist(spec.disc_center, center) / dd;
  gt.disc_to_edge_dd = edge_distance(spec.disc_center, s) / dd - 0.5;
  gt.realized_visibility_global = spec.vessel_visibility_global;
  gt.realized_visibility_near_fovea = spec.vessel_visibility_near_fovea;
  return gt;
}

nlohmann::json to_json(const SynthSpec& s) {
  return {{"side", s.side},
          {"field_type", to_string(s.field)},
          {"disc_diameter_px", s.disc_diameter_px},
          {"disc_center", {s.disc_center.x, s.disc_center.y}},
          {"fovea_center", {s.fovea_center.x, s.fovea_center.y}},
          {"vessel_visibility_global", s.vessel_visibility_global},
          {"vessel_visibility_near_fovea", s.vessel_visibility_near_fovea},
          {"fine_vessels_on_disc", s.fine_vessels_on_disc},
          {"degradations",
           {{"blur_sigma", s.degradation.blur_sigma},
            {"brightness_scale", s.degradation.brightness_scale},
            {"contrast_scale", s.degradation.contrast_scale}}}};
}

nlohmann::json to_json(const GroundTruth& t) {
  return {{"spec", to_json(t.spec)},
          {"fovea_to_center_dd", t.fovea_to_center_dd},
          {"fovea_to_edge_dd", t.fovea_to_edge_dd},
          {"disc_to_center_dd", t.disc_to_center_dd},
          {"disc_to_edge_dd", t.disc_to_edge_dd},
          {"realized_visibility_global", t.realized_visibility_global},
          {"realized_visibility_near_fovea", t.realized_visibility_near_fovea},
          {"grade", to_string(t.grade)},
          {"class", to_string(t.label)}};
}

// ----------------------------------------------------------------- rendering

namespace {

// Smooth value noise in roughly [0, 1]: bilinear interpolation of random
// lattices at two scales.
class ValueNoise {
 public:
  ValueNoise(std::mt19937_64& rng, std::size_t side) : side_(static_cast<double>(side)) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& grid : grids_) {
      grid.values.resize(grid.n * grid.n);
      for (auto& v : grid.values) v = u(rng);
    }
  }

  double operator()(double x, double y) const {
    double total = 0.0, weight = 0.0;
    for (const auto& grid : grids_) {
      const double gx = x / side_ * static_cast<double>(grid.n - 1);
      const double gy = y / side_ * static_cast<double>(grid.n - 1);
      const auto ix = std::min<std::size_t>(static_cast<std::size_t>(gx), grid.n - 2);
      const auto iy = std::min<std::size_t>(static_cast<std::size_t>(gy), grid.n - 2);
      const double fx = gx - static_cast<double>(ix), fy = gy - static_cast<double>(iy);
      auto at = [&](std::size_t i, std::size_t j) { return grid.values[j * grid.n + i]; };
      const double top = at(ix, iy) + fx * (at(ix + 1, iy) - at(ix, iy));
      const double bottom = at(ix, iy + 1) + fx * (at(ix + 1, iy + 1) - at(ix, iy + 1));
      total += grid.weight * (top + fy * (bottom - top));
      weight += grid.weight;
    }
    return total / weight;
  }

 private:
  struct Grid {
    std::size_t n;
    double weight;
    std::vector<double> values;
  };
  double side_;
  Grid grids_[2] = {{5, 1.0, {}}, {11, 0.5, {}}};
};

// Anti-aliased thick segment, max-composited into `map`.
void draw_segment(std::vector<float>& map, std::size_t side, Point a, Point b, double width,
                  float strength) {
  const double r = width / 2 + 1.0;
  const auto lo_x = static_cast<long>(std::floor(std::min(a.x, b.x) - r));
  const auto hi_x = static_cast<long>(std::ceil(std::max(a.x, b.x) + r));
  const auto lo_y = static_cast<long>(std::floor(std::min(a.y, b.y) - r));
  const auto hi_y = static_cast<long>(std::ceil(std::max(a.y, b.y) + r));
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  const long n = static_cast<long>(side);
  for (long y = std::max(0L, lo_y); y <= std::min(n - 1, hi_y); ++y) {
    for (long x = std::max(0L, lo_x); x <= std::min(n - 1, hi_x); ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double d = std::hypot(px - (a.x + t * dx), py - (a.y + t * dy));
      const double cover = std::clamp(width / 2 + 0.5 - d, 0.0, 1.0);
      if (cover > 0) {
        float& m = map[static_cast<std::size_t>(y) * side + static_cast<std::size_t>(x)];
        m = std::max(m, static_cast<float>(cover) * strength);
      }
    }
  }
}

struct VesselTracer {
  std::vector<float>& map;
  std::size_t side;
  Point fov_center;
  double fov_radius;
  std::mt19937_64& rng;

  // Random walk from `p` heading `angle`; `bend` is the mean turn per step.
  void trace(Point p, double angle, double width, double bend, int depth) {
    std::normal_distribution<double> jitter(0.0, 0.06);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double step = static_cast<double>(side) / 90.0;
    const int max_steps = static_cast<int>(3.0 * fov_radius / step);
    for (int i = 0; i < max_steps && width > 0.5; ++i) {
      angle += bend + jitter(rng);
      const Point q{p.x + step * std::cos(angle), p.y + step * std::sin(angle)};
      if (dist(q, fov_center) > fov_radius) return;
      draw_segment(map, side, p, q, width, 1.0f);
      p = q;
      width *= 0.992;
      if (depth < 2 && u(rng) < 0.035) {
        const double dir = u(rng) < 0.5 ? -1.0 : 1.0;
        trace(p, angle + dir * (0.5 + 0.4 * u(rng)), width * 0.65, bend * 0.5 + dir * 0.01,
              depth + 1);
      }
    }
  }
};

}  // namespace

Rendered render_fundus(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const std::size_t n = spec.side;
  const double s = static_cast<double>(n);
  const double dd = spec.disc_diameter_px;
  const Point center{s / 2, s / 2};
  const double fov_radius = 0.47 * s;
  const double scale = s / 256.0;

  // Vessels: four arcades bending around the fovea plus smaller nasal
  // branches, all leaving the disc.
  std::vector<float> vessels(n * n, 0.0f), fine(n * n, 0.0f);
  {
    VesselTracer tracer{vessels, n, center, fov_radius, rng};
    const double to_fovea = std::atan2(spec.fovea_center.y - spec.disc_center.y,
                                       spec.fovea_center.x - spec.disc_center.x);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double side_sign : {-1.0, 1.0}) {
      tracer.trace(spec.disc_center, to_fovea + side_sign * (0.9 + 0.15 * u(rng)),
                   2.8 * scale, -side_sign * 0.035, 0);
      tracer.trace(spec.disc_center, to_fovea + side_sign * (1.5 + 0.2 * u(rng)),
                   2.2 * scale, -side_sign * 0.02, 0);
      tracer.trace(spec.disc_center, to_fovea + std::numbers::pi + side_sign * (0.6 + 0.3 * u(rng)),
                   1.8 * scale, side_sign * 0.01, 0);
    }
    for (int i = 0; i < 3; ++i) {
      tracer.trace(spec.disc_center, to_fovea + std::numbers::pi + u(rng) * 1.2, 1.3 * scale,
                   0.02 * u(rng), 1);
    }
  }
  if (spec.fine_vessels_on_disc) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 7; ++i) {
      const double a = 2 * std::numbers::pi * u(rng);
      const double r0 = 0.1 * dd, r1 = (0.38 + 0.1 * u(rng)) * dd;
      const double bend = (u(rng) - 0.5) * 0.8;
      const Point p{spec.disc_center.x + r0 * std::cos(a), spec.disc_center.y + r0 * std::sin(a)};
      const Point q{spec.disc_center.x + r1 * std::cos(a + bend),
                    spec.disc_center.y + r1 * std::sin(a + bend)};
      draw_segment(fine, n, p, q, std::max(0.9, 1.1 * scale), 1.0f);
    }
  }

  // Field of view and the region within 1 DD of the fovea.
  Rendered out;
  Canvas& c = out.canvas;
  c.side = n;
  c.rgb.assign(3 * n * n, 0.0f);
  c.fov.assign(n * n, 0);
  std::vector<std::uint8_t> near(n * n, 0);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const Point p{x + 0.5, y + 0.5};
      if (dist(p, center) <= fov_radius) {
        c.fov[y * n + x] = 1;
        near[y * n + x] = dist(p, spec.fovea_center) <= dd;
      }
    }

  // Obscured regions: threshold a smooth noise field at quantiles chosen so
  // the visible fractions inside and outside the fovea region hit the
  // requested values.
  ValueNoise haze_noise(rng, n);
  std::vector<double> noise(n * n, 0.0);
  std::vector<double> in_values, out_values;
  for (std::size_t i = 0; i < n * n; ++i) {
    if (!c.fov[i]) continue;
    noise[i] = haze_noise(static_cast<double>(i % n) + 0.5, static_cast<double>(i / n) + 0.5);
    (near[i] ? in_values : out_values).push_back(noise[i]);
  }
  const double area = static_cast<double>(in_values.size() + out_values.size());
  auto quantile_cut = [](std::vector<double>& values, std::size_t keep) {
    if (keep >= values.size()) return std::numeric_limits<double>::infinity();
    std::nth_element(values.begin(), values.begin() + static_cast<long>(keep), values.end());
    return values[keep];
  };
  const auto keep_in = static_cast<std::size_t>(
      std::llround(spec.vessel_visibility_near_fovea * static_cast<double>(in_values.size())));
  const long want_total = std::llround(spec.vessel_visibility_global * area);
  const auto keep_out = static_cast<std::size_t>(
      std::clamp<long>(want_total - static_cast<long>(keep_in), 0,
                       static_cast<long>(out_values.size())));
  const double cut_in = quantile_cut(in_values, keep_in);
  const double cut_out = quantile_cut(out_values, keep_out);

  std::size_t visible = 0, visible_near = 0, near_count = 0;
  std::vector<std::uint8_t> clear(n * n, 0);
  for (std::size_t i = 0; i < n * n; ++i) {
    if (!c.fov[i]) continue;
    clear[i] = noise[i] < (near[i] ? cut_in : cut_out);
    visible += clear[i];
    if (near[i]) {
      ++near_count;
      visible_near += clear[i];
    }
  }
  out.visibility_global = area > 0 ? static_cast<double>(visible) / area : 1.0;
  out.visibility_near_fovea = near_count > 0
                                  ? static_cast<double>(visible_near) / static_cast<double>(near_count)
                                  : spec.vessel_visibility_near_fovea;
  if (std::abs(out.visibility_global - spec.vessel_visibility_global) > 0.05 ||
      std::abs(out.visibility_near_fovea - spec.vessel_visibility_near_fovea) > 0.05) {
    throw GenerationError("requested visibility fractions cannot be realized together");
  }

  // Shading.
  ValueNoise tint(rng, n);
  std::normal_distribution<float> grain(0.0f, 2.5f);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const std::size_t i = y * n + x;
      if (!c.fov[i]) continue;
      const Point p{x + 0.5, y + 0.5};
      const double r = dist(p, center) / fov_radius;
      const double shade = (1.0 - 0.4 * r * r) * (0.9 + 0.2 * tint(p.x, p.y));
      double rgb[3] = {205.0 * shade, 88.0 * shade, 42.0 * shade};

      // Optic disc with a brighter cup.
      const double d_disc = dist(p, spec.disc_center) / dd;
      const double disc_w = std::clamp((0.5 - d_disc) * dd / 1.5 + 0.5, 0.0, 1.0);
      const double cup_w = std::clamp((0.18 - d_disc) * dd / 1.5 + 0.5, 0.0, 1.0);
      const double disc_rgb[3] = {245, 196, 122}, cup_rgb[3] = {255, 232, 176};
      for (int k = 0; k < 3; ++k) {
        rgb[k] += disc_w * (disc_rgb[k] - rgb[k]);
        rgb[k] += cup_w * (cup_rgb[k] - rgb[k]);
      }
      // Darker fovea patch.
      const double d_fovea = dist(p, spec.fovea_center) / dd;
      const double dark = 1.0 - 0.4 * std::exp(-d_fovea * d_fovea / (2 * 0.4 * 0.4));
      for (double& v : rgb) v *= dark;

      // Vessels where the field is clear.
      const double v = clear[i] ? std::max(vessels[i], 0.55f * fine[i]) : 0.0;
      rgb[0] *= 1.0 - 0.45 * v;
      rgb[1] *= 1.0 - 0.65 * v;
      rgb[2] *= 1.0 - 0.6 * v;

      // Haze over obscured regions, fading in past the cut.
      if (!clear[i]) {
        const double cut = near[i] ? cut_in : cut_out;
        const double h = 0.55 * std::clamp((noise[i] - cut) / 0.04 + 0.3, 0.3, 1.0);
        const double haze_rgb[3] = {180, 128, 104};
        for (int k = 0; k < 3; ++k) rgb[k] += h * (haze_rgb[k] - rgb[k]);
      }
      for (int k = 0; k < 3; ++k) {
        c.rgb[3 * i + k] = std::clamp(static_cast<float>(rgb[k]) + grain(rng), 0.0f, 255.0f);
      }
    }
  return out;
}

void apply_degradations(Canvas& c, const Degradation& d) {
  const std::size_t n = c.side;
  if (d.blur_sigma > 0) {
    const int radius = static_cast<int>(std::ceil(3 * d.blur_sigma));
    std::vector<float> kernel(2 * radius + 1);
    float total = 0;
    for (int k = -radius; k <= radius; ++k) {
      kernel[k + radius] = static_cast<float>(std::exp(-k * k / (2 * d.blur_sigma * d.blur_sigma)));
      total += kernel[k + radius];
    }
    for (auto& k : kernel) k /= total;
    std::vector<float> tmp(c.rgb.size());
    const long last = static_cast<long>(n) - 1;
    for (int pass = 0; pass < 2; ++pass) {
      const std::vector<float>& src = pass == 0 ? c.rgb : tmp;
      std::vector<float>& dst = pass == 0 ? tmp : c.rgb;
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
          for (int ch = 0; ch < 3; ++ch) {
            float acc = 0;
            for (int k = -radius; k <= radius; ++k) {
              const long xx = pass == 0 ? std::clamp(static_cast<long>(x) + k, 0L, last)
                                        : static_cast<long>(x);
              const long yy = pass == 1 ? std::clamp(static_cast<long>(y) + k, 0L, last)
                                        : static_cast<long>(y);
              acc += kernel[k + radius] * src[3 * (static_cast<std::size_t>(yy) * n +
                                                   static_cast<std::size_t>(xx)) + ch];
            }
            dst[3 * (y * n + x) + ch] = acc;
          }
    }
  }
  if (d.brightness_scale != 1.0) {
    for (auto& v : c.rgb) v = static_cast<float>(v * d.brightness_scale);
  }
  if (d.contrast_scale != 1.0) {
    double mean[3] = {0, 0, 0};
    std::size_t count = 0;
    for (std::size_t i = 0; i < n * n; ++i) {
      if (!c.fov[i]) continue;
      ++count;
      for (int ch = 0; ch < 3; ++ch) mean[ch] += c.rgb[3 * i + ch];
    }
    if (count == 0) return;
    for (double& m : mean) m /= static_cast<double>(count);
    for (std::size_t i = 0; i < n * n; ++i) {
      if (!c.fov[i]) continue;
      for (int ch = 0; ch < 3; ++ch) {
        float& v = c.rgb[3 * i + ch];
        v = static_cast<float>(mean[ch] + d.contrast_scale * (v - mean[ch]));
      }
    }
  }
}

RawImage quantize(const Canvas& c) {
  RawImage img(c.side, c.side);
  for (std::size_t i = 0; i < c.rgb.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(c.rgb[i]), 0L, 255L));
  }
  return img;
}

Generated generate_fundus(const SynthSpec& spec, std::uint64_t seed) {
  auto truth = measure_geometry(spec);
  auto rendered = render_fundus(spec, seed);
  apply_degradations(rendered.canvas, spec.degradation);
  truth.realized_visibility_global = rendered.visibility_global;
  truth.realized_visibility_near_fovea = rendered.visibility_near_fovea;
  truth.grade = rule_grade(truth.rule_inputs());
  truth.label = class_of(truth.grade);
  return {quantize(rendered.canvas), std::move(truth)};
}

// ------------------------------------------------------------------ sampling

double Range::sample(std::mt19937_64& rng) const {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

ClassProfile SynthOptions::default_accept_profile() {
  return {{0.75, 1.0}, {0.93, 1.0}, {0.0, 1.6}, 0.97, {0.0, 0.6}, {0.9, 1.1}, {0.9, 1.1}};
}

ClassProfile SynthOptions::default_reject_profile() {
  return {{0.05, 0.45}, {0.0, 0.6}, {0.0, 2.6}, 0.15, {1.8, 3.5}, {0.45, 0.7}, {0.45, 0.7}};
}

ClassProfile SynthOptions::default_ambiguous_profile() {
  return {{0.55, 0.75}, {0.93, 1.0}, {0.0, 1.0}, 1.0, {0.8, 1.6}, {0.7, 0.85}, {0.7, 0.85}};
}

namespace {

// Lays out disc and fovea for a field type: the centered structure sits at
// `centered`, the other one 2.5 DD away horizontally.
SynthSpec place(const SynthOptions& o, FieldType field, double dd, Point centered,
                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double eye = u(rng) < 0 ? -1.0 : 1.0;
  const Point other{centered.x + eye * kDiscFoveaDistanceDd * dd, centered.y + 0.3 * dd * u(rng)};
  SynthSpec spec;
  spec.side = o.side;
  spec.field = field;
  spec.disc_diameter_px = dd;
  spec.fovea_center = field == FieldType::kMacula ? centered : other;
  spec.disc_center = field == FieldType::kMacula ? other : centered;
  return spec;
}

bool inside(const SynthSpec& spec) {
  const double s = static_cast<double>(spec.side);
  for (Point p : {spec.disc_center, spec.fovea_center}) {
    if (p.x < 0 || p.y < 0 || p.x > s || p.y > s) return false;
  }
  return true;
}

void apply_profile(SynthSpec& spec, const ClassProfile& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  spec.vessel_visibility_global = p.visibility_global.sample(rng);
  spec.vessel_visibility_near_fovea = p.visibility_near_fovea.sample(rng);
  spec.fine_vessels_on_disc = u(rng) < p.fine_vessels_probability;
  spec.degradation = {p.blur_sigma.sample(rng), p.brightness.sample(rng), p.contrast.sample(rng)};
}

}  // namespace

Generated sample_class(Label target, const SynthOptions& o, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ClassProfile& profile = target == Label::kAccept ? o.accept : o.reject;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = static_cast<double>(o.side);
  for (std::size_t attempt = 0; attempt < o.max_attempts; ++attempt) {
    const FieldType field = u(rng) < o.macula_fraction ? FieldType::kMacula : FieldType::kDisc;
    const double dd = o.disc_diameter_fraction.sample(rng) * s;
    const double offset = profile.center_offset_dd.sample(rng) * dd;
    const double angle = 2 * std::numbers::pi * u(rng);
    SynthSpec spec = place(o, field, dd,
                           {s / 2 + offset * std::cos(angle), s / 2 + offset * std::sin(angle)}, rng);
    if (!inside(spec)) continue;
    apply_profile(spec, profile, rng);
    // Cheap pre-check on the requested values before rendering.
    if (class_of(rule_grade(measure_geometry(spec).rule_inputs())) != target) continue;
    try {
      auto g = generate_fundus(spec, rng());
      if (g.truth.label == target) return g;
    } catch (const GenerationError&) {
    }
  }
  throw GenerationError("could not sample a " + to_string(target) + " image in " +
                        std::to_string(o.max_attempts) + " attempts");
}

Generated sample_borderline(const SynthOptions& o, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = static_cast<double>(o.side);
  const ClassProfile& profile = o.ambiguous;
  for (std::size_t attempt = 0; attempt < o.max_attempts; ++attempt) {
    const FieldType field = u(rng) < o.macula_fraction ? FieldType::kMacula : FieldType::kDisc;
    const double dd = o.disc_diameter_fraction.sample(rng) * s;
    // Either the structure sits 1.9-2.1 DD from an edge, or (macula only)
    // the near-fovea visibility sits at 0.855-0.945.
    const bool edge_mode = field == FieldType::kDisc || u(rng) < 0.5;
    Point centered;
    if (edge_mode) {
      const double margin =
          (1.9 + 0.2 * u(rng) + (field == FieldType::kDisc ? 0.5 : 0.0)) * dd;
      const double along = s / 2 + (u(rng) - 0.5) * 0.5 * s;
      switch (static_cast<int>(4 * u(rng))) {
        case 0: centered = {margin, along}; break;
        case 1: centered = {s - margin, along}; break;
        case 2: centered = {along, margin}; break;
        default: centered = {along, s - margin}; break;
      }
    } else {
      const double offset = profile.center_offset_dd.sample(rng) * dd;
      const double angle = 2 * std::numbers::pi * u(rng);
      centered = {s / 2 + offset * std::cos(angle), s / 2 + offset * std::sin(angle)};
    }
    SynthSpec spec = place(o, field, dd, centered, rng);
    if (!inside(spec)) continue;
    apply_profile(spec, profile, rng);
    if (!edge_mode) spec.vessel_visibility_near_fovea = 0.855 + 0.09 * u(rng);
    auto geo = measure_geometry(spec);
    // The other structure must not be the one near an edge.
    const double edge_dd = field == FieldType::kMacula ? geo.fovea_to_edge_dd : geo.disc_to_edge_dd;
    if (edge_mode && (edge_dd < 1.9 || edge_dd > 2.1)) continue;
    try {
      auto g = generate_fundus(spec, rng());
      if (!edge_mode && (g.truth.realized_visibility_near_fovea < 0.855 ||
                         g.truth.realized_visibility_near_fovea > 0.945)) {
        continue;
      }
      return g;
    } catch (const GenerationError&) {
    }
  }
  throw GenerationError("could not sample a borderline image in " +
                        std::to_string(o.max_attempts) + " attempts");
}

ClassCounts default_class_counts(std::size_t total) {
  ClassCounts c;
  c.reject = static_cast<std::size_t>(std::llround(0.04 * static_cast<double>(total)));
  c.ambiguous = static_cast<std::size_t>(std::llround(0.02 * static_cast<double>(total)));
  c.accept = total - c.reject - c.ambiguous;
  return c;
}

// ------------------------------------------------------------------- dataset

namespace {

std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%05zu", prefix, i);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// Generates every job (in parallel when OpenMP is available) and writes the
// image plus its truth sidecar. Results come back in job order.
template <typename Fn>
std::vector<Generated> generate_all(std::size_t count, Fn&& make) {
  std::vector<Generated> out(count);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < count; ++i) {
    try {
      out[i] = make(i);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

ManifestEntry make_entry(const std::string& id, const std::filesystem::path& out_dir,
                         const Generated& g, const std::vector<Label>& votes) {
  const std::string rel = "images/" + id + ".ppm";
  save_image(g.image, out_dir / rel);
  const auto truth = to_json(g.truth);
  write_text(out_dir / "images" / (id + ".truth.json"), truth.dump(2) + "\n");
  ManifestEntry e;
  e.image_id = id;
  e.path = rel;
  for (std::size_t k = 0; k < votes.size(); ++k) {
    e.grades.push_back({id, "synth-grader-" + std::to_string(k + 1), votes[k], kSynthGradeTime});
  }
  e.geometry = truth;
  return e;
}

}  // namespace

DatasetManifest build_synth_dataset(std::size_t n_accept, std::size_t n_reject,
                                    std::uint64_t seed, const std::filesystem::path& out_dir,
                                    const SynthOptions& options) {
  std::vector<Label> targets(n_accept, Label::kAccept);
  targets.insert(targets.end(), n_reject, Label::kReject);
  std::mt19937_64 order_rng(derive_seed(seed, 1, 0));
  std::shuffle(targets.begin(), targets.end(), order_rng);

  std::filesystem::create_directories(out_dir / "images");
  const auto generated = generate_all(targets.size(), [&](std::size_t i) {
    return sample_class(targets[i], options, derive_seed(seed, 2, i));
  });
  DatasetManifest m;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& g = generated[i];
    if (g.truth.label != targets[i]) throw GenerationError("rule oracle disagrees with target");
    m.add(make_entry(numbered("img", i), out_dir, g, {targets[i], targets[i], targets[i]}));
  }
  m.recompute_consensus();
  return m;
}

DatasetManifest make_ambiguous_variants(const DatasetManifest& manifest, std::size_t k,
                                        std::uint64_t seed, const std::filesystem::path& out_dir,
                                        const SynthOptions& options) {
  DatasetManifest m = manifest;
  if (k == 0) return m;
  std::filesystem::create_directories(out_dir / "images");
  const auto generated = generate_all(k, [&](std::size_t i) {
    return sample_borderline(options, derive_seed(seed, 3, i));
  });
  std::mt19937_64 vote_rng(derive_seed(seed, 4, 0));
  for (std::size_t i = 0; i < k; ++i) {
    const Label majority = generated[i].truth.label;
    const Label minority = majority == Label::kAccept ? Label::kReject : Label::kAccept;
    std::vector<Label> votes = {majority, majority, minority};
    std::shuffle(votes.begin(), votes.end(), vote_rng);
    m.add(make_entry(numbered("amb", i), out_dir, generated[i], votes));
  }
  m.recompute_consensus();
  for (const auto& e : m.entries) {
    if (e.image_id.rfind("amb-", 0) == 0 && e.consensus != Consensus::kAmbiguous) {
      throw GenerationError("borderline entry " + e.image_id + " is not ambiguous");
    }
  }
  return m;
}

}  // namespace fqc
