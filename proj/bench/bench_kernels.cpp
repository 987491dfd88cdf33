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

// Serial reference kernels against the OpenMP ones, on layer shapes from the
// default network at batch 1.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fqc/kernels.hpp"

namespace k = fqc::kernels;
namespace ref = fqc::kernels::reference;

namespace {

std::vector<float> random_buffer(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// 0: first layer (11x11 stride 4), 1: a 3x3 middle layer.
k::ConvGeometry conv_shape(int which) {
  if (which == 0) return {1, 3, 256, 256, 96, 11, 11, 4, 0};
  return {1, 256, 15, 15, 384, 3, 3, 1, 1};
}

template <bool Parallel>
void BM_conv2d_forward(benchmark::State& state) {
  const auto g = conv_shape(static_cast<int>(state.range(0)));
  const auto in = random_buffer(g.input_size(), 1);
  const auto w = random_buffer(g.kernel_size(), 2);
  const auto b = random_buffer(g.out_channels, 3);
  std::vector<float> out(g.output_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::conv2d_forward<float>(g, in, w, b, out);
    } else {
      ref::conv2d_forward<float>(g, in, w, b, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_conv2d_backward(benchmark::State& state) {
  const auto g = conv_shape(static_cast<int>(state.range(0)));
  const auto in = random_buffer(g.input_size(), 1);
  const auto w = random_buffer(g.kernel_size(), 2);
  const auto go = random_buffer(g.output_size(), 3);
  std::vector<float> gi(g.input_size()), gw(g.kernel_size()), gb(g.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::conv2d_backward<float>(g, in, w, go, gi, gw, gb);
    } else {
      ref::conv2d_backward<float>(g, in, w, go, gi, gw, gb);
    }
    benchmark::DoNotOptimize(gw.data());
  }
}

template <bool Parallel>
void BM_maxpool2d(benchmark::State& state) {
  const k::PoolGeometry g{1, 96, 62, 62, 3, 2};
  const auto in = random_buffer(g.input_size(), 4);
  std::vector<float> out(g.output_size()), gi(g.input_size());
  std::vector<std::size_t> argmax(g.output_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::maxpool2d_forward<float>(g, in, out, argmax);
      k::maxpool2d_backward<float>(g, argmax, out, gi);
    } else {
      ref::maxpool2d_forward<float>(g, in, out, argmax);
      ref::maxpool2d_backward<float>(g, argmax, out, gi);
    }
    benchmark::DoNotOptimize(gi.data());
  }
}

template <bool Parallel>
void BM_lrn(benchmark::State& state) {
  const std::size_t channels = 96, plane = 30 * 30;
  const k::LrnParams p;
  const auto in = random_buffer(channels * plane, 5);
  const auto go = random_buffer(channels * plane, 6);
  std::vector<float> out(in.size()), scale(in.size()), gi(in.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::lrn_forward<float>(1, channels, plane, p, in, out, scale);
      k::lrn_backward<float>(1, channels, plane, p, in, scale, go, gi);
    } else {
      ref::lrn_forward<float>(1, channels, plane, p, in, out, scale);
      ref::lrn_backward<float>(1, channels, plane, p, in, scale, go, gi);
    }
    benchmark::DoNotOptimize(gi.data());
  }
}

template <bool Parallel>
void BM_linear(benchmark::State& state) {
  const std::size_t n = 8, in_dim = 4096, out_dim = 1024;
  const auto in = random_buffer(n * in_dim, 7);
  const auto w = random_buffer(out_dim * in_dim, 8);
  const auto b = random_buffer(out_dim, 9);
  const auto go = random_buffer(n * out_dim, 10);
  std::vector<float> out(n * out_dim), gi(in.size()), gw(w.size()), gb(out_dim);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::linear_forward<float>(n, in_dim, out_dim, in, w, b, out);
      k::linear_backward<float>(n, in_dim, out_dim, in, w, go, gi, gw, gb);
    } else {
      ref::linear_forward<float>(n, in_dim, out_dim, in, w, b, out);
      ref::linear_backward<float>(n, in_dim, out_dim, in, w, go, gi, gw, gb);
    }
    benchmark::DoNotOptimize(gw.data());
  }
}

}  // namespace

BENCHMARK(BM_conv2d_forward<false>)->Name("conv2d_forward/reference")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_forward<true>)->Name("conv2d_forward/parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_backward<false>)->Name("conv2d_backward/reference")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_backward<true>)->Name("conv2d_backward/parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_maxpool2d<false>)->Name("maxpool2d/reference")->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_maxpool2d<true>)->Name("maxpool2d/parallel")->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_lrn<false>)->Name("lrn/reference")->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_lrn<true>)->Name("lrn/parallel")->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_linear<false>)->Name("linear/reference")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_linear<true>)->Name("linear/parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
