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

// Raw compute kernels over flat row-major buffers.
//
// Every kernel exists twice: fqc::kernels::reference holds the serial
// direct-loop version used as the test oracle, fqc::kernels holds the
// OpenMP version used everywhere else. Parallel kernels partition work so
// that each output element is owned by one thread and reduced in a fixed
// order, so results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace fqc::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t kernel_size() const {
    return out_channels * in_channels * kernel_h * kernel_w;
  }
  std::size_t output_size() const {
    return batch * out_channels * out_h() * out_w();
  }
};

struct PoolGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t window = 1;
  std::size_t stride = 1;

  std::size_t out_h() const { return (in_h - window) / stride + 1; }
  std::size_t out_w() const { return (in_w - window) / stride + 1; }
  std::size_t input_size() const { return batch * channels * in_h * in_w; }
  std::size_t output_size() const { return batch * channels * out_h() * out_w(); }
};

struct LrnParams {
  std::size_t depth = 5;
  double k = 2.0;
  double alpha = 1e-4;
  double beta = 0.75;
};

/// Channel window [c - before, c + after] of a depth-n LRN, clipped later.
inline std::size_t lrn_before(std::size_t depth) { return (depth - 1) / 2; }
inline std::size_t lrn_after(std::size_t depth) { return depth - 1 - lrn_before(depth); }

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> kernel, std::span<const T> bias,
                    std::span<T> output);

/// Accumulates into grad_input, grad_kernel and grad_bias. An empty span
/// skips that gradient.
template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> kernel, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_kernel,
                     std::span<T> grad_bias);

/// `argmax` receives the flat input index of each output's maximum (first
/// occurrence in row-major order on ties).
template <typename T>
void maxpool2d_forward(const PoolGeometry& g, std::span<const T> input,
                       std::span<T> output, std::span<std::size_t> argmax);

template <typename T>
void maxpool2d_backward(const PoolGeometry& g,
                        std::span<const std::size_t> argmax,
                        std::span<const T> grad_output, std::span<T> grad_input);

/// `scale` receives k + alpha * (window sum of squares) per element. Returns
/// false if any scale is not strictly positive.
template <typename T>
bool lrn_forward(std::size_t batch, std::size_t channels, std::size_t plane,
                 const LrnParams& p, std::span<const T> input,
                 std::span<T> output, std::span<T> scale);

template <typename T>
void lrn_backward(std::size_t batch, std::size_t channels, std::size_t plane,
                  const LrnParams& p, std::span<const T> input,
                  std::span<const T> scale, std::span<const T> grad_output,
                  std::span<T> grad_input);

/// output[n, m] = sum_d input[n, d] * weight[m, d] + bias[m]
template <typename T>
void linear_forward(std::size_t n, std::size_t in_dim, std::size_t out_dim,
                    std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output);

template <typename T>
void linear_backward(std::size_t n, std::size_t in_dim, std::size_t out_dim,
                     std::span<const T> input, std::span<const T> weight,
                     std::span<const T> grad_output, std::span<T> grad_input,
                     std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
void relu_forward(std::span<const T> input, std::span<T> output);

template <typename T>
void relu_backward(std::span<const T> input, std::span<const T> grad_output,
                   std::span<T> grad_input);

namespace reference {

// Serial direct-loop versions of the kernels above, same contracts.

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> kernel, std::span<const T> bias,
                    std::span<T> output);

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> kernel, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_kernel,
                     std::span<T> grad_bias);

template <typename T>
void maxpool2d_forward(const PoolGeometry& g, std::span<const T> input,
                       std::span<T> output, std::span<std::size_t> argmax);

template <typename T>
void maxpool2d_backward(const PoolGeometry& g,
                        std::span<const std::size_t> argmax,
                        std::span<const T> grad_output, std::span<T> grad_input);

template <typename T>
bool lrn_forward(std::size_t batch, std::size_t channels, std::size_t plane,
                 const LrnParams& p, std::span<const T> input,
                 std::span<T> output, std::span<T> scale);

template <typename T>
void lrn_backward(std::size_t batch, std::size_t channels, std::size_t plane,
                  const LrnParams& p, std::span<const T> input,
                  std::span<const T> scale, std::span<const T> grad_output,
                  std::span<T> grad_input);

template <typename T>
void linear_forward(std::size_t n, std::size_t in_dim, std::size_t out_dim,
                    std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output);

template <typename T>
void linear_backward(std::size_t n, std::size_t in_dim, std::size_t out_dim,
                     std::span<const T> input, std::span<const T> weight,
                     std::span<const T> grad_output, std::span<T> grad_input,
                     std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
void relu_forward(std::span<const T> input, std::span<T> output);

template <typename T>
void relu_backward(std::span<const T> input, std::span<const T> grad_output,
                   std::span<T> grad_input);

}  // namespace reference

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int thread_count();

}  // namespace fqc::kernels
