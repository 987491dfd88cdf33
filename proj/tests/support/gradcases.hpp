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

// Random small gradient-check cases, one generator per differentiable op.
// Every tensor has at most 64 elements; inputs are kept away from the
// non-differentiable points (relu at 0, maxpool ties, hinge corner).

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace fqc::testing {

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double conv2d_case(std::mt19937_64& rng) {
  std::size_t n, c, h, w, k, kh, kw, stride, pad;
  do {
    n = pick(rng, 1, 2);
    c = pick(rng, 1, 3);
    h = pick(rng, 2, 6);
    w = pick(rng, 2, 6);
    k = pick(rng, 1, 3);
    pad = pick(rng, 0, 1);
    kh = pick(rng, 1, std::min<std::size_t>(3, h + 2 * pad));
    kw = pick(rng, 1, std::min<std::size_t>(3, w + 2 * pad));
    stride = pick(rng, 1, 2);
  } while (n * c * h * w > 64 || k * c * kh * kw > 64);
  auto x = random_tensor(rng, {n, c, h, w});
  auto kernel = random_tensor(rng, {k, c, kh, kw});
  auto bias = random_tensor(rng, {k});
  const std::size_t out_size =
      n * k * ((h + 2 * pad - kh) / stride + 1) * ((w + 2 * pad - kw) / stride + 1);
  auto coeffs = random_tensor(rng, {out_size});
  auto r = gradcheck(
      [&](Tape<double>* tape, std::vector<DTensor>& p) {
        return weighted_sum(tape, ops::conv2d(tape, p[0], p[1], p[2], stride, pad),
                            coeffs);
      },
      {x, kernel, bias});
  return r.max_rel_error;
}

inline double maxpool2d_case(std::mt19937_64& rng) {
  const std::size_t c = pick(rng, 1, 2);
  const std::size_t h = pick(rng, 2, 5), w = pick(rng, 2, 5);
  const std::size_t window = pick(rng, 1, std::min<std::size_t>({h, w, 3}));
  const std::size_t stride = pick(rng, 1, 2);
  // Distinct values spaced far beyond the finite-difference step.
  std::vector<double> values(c * h * w);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = 0.05 * static_cast<double>(i);
  std::shuffle(values.begin(), values.end(), rng);
  DTensor x({1, c, h, w}, values);
  const std::size_t out_size = c * ((h - window) / stride + 1) * ((w - window) / stride + 1);
  auto coeffs = random_tensor(rng, {out_size});
  auto r = gradcheck(
      [&](Tape<double>* tape, std::vector<DTensor>& p) {
        return weighted_sum(tape, ops::maxpool2d(tape, p[0], window, stride), coeffs);
      },
      {x});
  return r.max_rel_error;
}

inline double lrn_case(std::mt19937_64& rng) {
  const std::size_t c = pick(rng, 1, 6);
  const std::size_t h = pick(rng, 1, 3), w = pick(rng, 1, 3);
  kernels::LrnParams params;
  params.depth = pick(rng, 1, 5);
  params.k = std::uniform_real_distribution<double>(0.5, 3.0)(rng);
  params.alpha = std::uniform_real_distribution<double>(1e-4, 0.5)(rng);
  params.beta = std::uniform_real_distribution<double>(0.5, 1.0)(rng);
  auto x = random_tensor(rng, {1, c, h, w}, -2.0, 2.0);
  auto coeffs = random_tensor(rng, {c * h * w});
  auto r = gradcheck(
      [&](Tape<double>* tape, std::vector<DTensor>& p) {
        return weighted_sum(tape, ops::lrn(tape, p[0], params), coeffs);
      },
      {x});
  return r.max_rel_error;
}

inline double relu_case(std::mt19937_64& rng) {
  const std::size_t n = pick(rng, 1, 64);
  auto x = random_tensor(rng, {n});
  for (auto& v : x.data()) {
    if (std::abs(v) < 1e-3) v = 0.5;
  }
  auto coeffs = random_tensor(rng, {n});
  auto r = gradcheck(
      [&](Tape<double>* tape, std::vector<DTensor>& p) {
        return weighted_sum(tape, ops::relu(tape, p[0]), coeffs);
      },
      {x});
  return r.max_rel_error;
}

inline double linear_case(std::mt19937_64& rng) {
  const std::size_t n = pick(rng, 1, 4), d = pick(rng, 1, 8), m = pick(rng, 1, 8);
  auto x = random_tensor(rng, {n, d});
  auto weight = random_tensor(rng, {m, d});
  auto bias = random_tensor(rng, {m});
  auto coeffs = random_tensor(rng, {n * m});
  auto r = gradcheck(
      [&](Tape<double>* tape, std::vector<DTensor>& p) {
        return weighted_sum(tape, ops::linear(tape, p[0], p[1], p[2]), coeffs);
      },
      {x, weight, bias});
  return r.max_rel_error;
}

inline double hinge_loss_case(std::mt19937_64& rng) {
  const std::size_t n = pick(rng, 1, 16);
  auto scores = random_tensor(rng, {n}, -3.0, 3.0);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = pick(rng, 0, 1) ? 1 : -1;
    if (std::abs(1.0 - labels[i] * scores[i]) < 1e-3) scores[i] += 0.1;
  }
  auto r = gradcheck(
      [&](Tape<double>* tape, std::vector<DTensor>& p) {
        return ops::hinge_loss(tape, p[0], std::span<const int>(labels));
      },
      {scores});
  return r.max_rel_error;
}

struct GradCase {
  std::string name;
  double (*run)(std::mt19937_64&);
};

inline std::vector<GradCase> all_grad_cases() {
  return {{"conv2d", conv2d_case}, {"maxpool2d", maxpool2d_case},
          {"lrn", lrn_case},       {"relu", relu_case},
          {"linear", linear_case}, {"hinge_loss", hinge_loss_case}};
}

}  // namespace fqc::testing
