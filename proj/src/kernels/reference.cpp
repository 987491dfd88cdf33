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

#include <algorithm>
#include <cmath>

#include "fqc/kernels.hpp"

namespace fqc::kernels::reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> kernel, std::span<const T> bias,
                    std::span<T> output) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const auto pad = static_cast<long>(g.padding);
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t k = 0; k < g.out_channels; ++k) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc = bias[k];
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t i = 0; i < g.kernel_h; ++i) {
              const long y = static_cast<long>(oy * g.stride + i) - pad;
              if (y < 0 || y >= static_cast<long>(g.in_h)) continue;
              for (std::size_t j = 0; j < g.kernel_w; ++j) {
                const long x = static_cast<long>(ox * g.stride + j) - pad;
                if (x < 0 || x >= static_cast<long>(g.in_w)) continue;
                acc += input[((n * g.in_channels + c) * g.in_h + y) * g.in_w + x] *
                       kernel[((k * g.in_channels + c) * g.kernel_h + i) * g.kernel_w + j];
              }
            }
          }
          output[((n * g.out_channels + k) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> kernel, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_kernel,
                     std::span<T> grad_bias) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const auto pad = static_cast<long>(g.padding);
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t k = 0; k < g.out_channels; ++k) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T go = grad_output[((n * g.out_channels + k) * oh + oy) * ow + ox];
          if (!grad_bias.empty()) grad_bias[k] += go;
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t i = 0; i < g.kernel_h; ++i) {
              const long y = static_cast<long>(oy * g.stride + i) - pad;
              if (y < 0 || y >= static_cast<long>(g.in_h)) continue;
              for (std::size_t j = 0; j < g.kernel_w; ++j) {
                const long x = static_cast<long>(ox * g.stride + j) - pad;
                if (x < 0 || x >= static_cast<long>(g.in_w)) continue;
                const std::size_t in_idx =
                    ((n * g.in_channels + c) * g.in_h + y) * g.in_w + x;
                const std::size_t k_idx =
                    ((k * g.in_channels + c) * g.kernel_h + i) * g.kernel_w + j;
                if (!grad_input.empty()) grad_input[in_idx] += go * kernel[k_idx];
                if (!grad_kernel.empty()) grad_kernel[k_idx] += go * input[in_idx];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void maxpool2d_forward(const PoolGeometry& g, std::span<const T> input,
                       std::span<T> output, std::span<std::size_t> argmax) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t plane = 0; plane < g.batch * g.channels; ++plane) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = plane * g.in_h * g.in_w + (oy * g.stride) * g.in_w +
                           ox * g.stride;
        for (std::size_t i = 0; i < g.window; ++i) {
          for (std::size_t j = 0; j < g.window; ++j) {
            const std::size_t idx = plane * g.in_h * g.in_w +
                                    (oy * g.stride + i) * g.in_w + ox * g.stride + j;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t out_idx = (plane * oh + oy) * ow + ox;
        output[out_idx] = input[best];
        argmax[out_idx] = best;
      }
    }
  }
}

template <typename T>
void maxpool2d_backward(const PoolGeometry& g, std::span<const std::size_t> argmax,
                        std::span<const T> grad_output, std::span<T> grad_input) {
  for (std::size_t i = 0; i < g.output_size(); ++i) {
    grad_input[argmax[i]] += grad_output[i];
  }
}

template <typename T>
bool lrn_forward(std::size_t batch, std::size_t channels, std::size_t plane,
                 const LrnParams& p, std::span<const T> input, std::span<T> output,
                 std::span<T> scale) {
  const std::size_t before = lrn_before(p.depth), after = lrn_after(p.depth);
  const T k = static_cast<T>(p.k), alpha = static_cast<T>(p.alpha),
          beta = static_cast<T>(p.beta);
  bool ok = true;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t lo = c >= before ? c - before : 0;
      const std::size_t hi = std::min(channels - 1, c + after);
      for (std::size_t s = 0; s < plane; ++s) {
        T sum = 0;
        for (std::size_t cc = lo; cc <= hi; ++cc) {
          const T v = input[(n * channels + cc) * plane + s];
          sum += v * v;
        }
        const std::size_t idx = (n * channels + c) * plane + s;
        const T d = k + alpha * sum;
        if (!(d > 0)) ok = false;
        scale[idx] = d;
        output[idx] = input[idx] * std::pow(d, -beta);
      }
    }
  }
  return ok;
}

template <typename T>
void lrn_backward(std::size_t batch, std::size_t channels, std::size_t plane,
                  const LrnParams& p, std::span<const T> input,
                  std::span<const T> scale, std::span<const T> grad_output,
                  std::span<T> grad_input) {
  const std::size_t before = lrn_before(p.depth), after = lrn_after(p.depth);
  const T alpha = static_cast<T>(p.alpha), beta = static_cast<T>(p.beta);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t j = 0; j < channels; ++j) {
      // Channels c whose window contains j.
      const std::size_t lo = j >= after ? j - after : 0;
      const std::size_t hi = std::min(channels - 1, j + before);
      for (std::size_t s = 0; s < plane; ++s) {
        const std::size_t idx = (n * channels + j) * plane + s;
        T cross = 0;
        for (std::size_t c = lo; c <= hi; ++c) {
          const std::size_t ci = (n * channels + c) * plane + s;
          cross += grad_output[ci] * input[ci] * std::pow(scale[ci], -beta - 1);
        }
        grad_input[idx] += grad_output[idx] * std::pow(scale[idx], -beta) -
                           2 * alpha * beta * input[idx] * cross;
      }
    }
  }
}

template <typename T>
void linear_forward(std::size_t n, std::size_t in_dim, std::size_t out_dim,
                    std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output) {
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t m = 0; m < out_dim; ++m) {
      T acc = 0;
      for (std::size_t d = 0; d < in_dim; ++d) {
        acc += input[r * in_dim + d] * weight[m * in_dim + d];
      }
      output[r * out_dim + m] = acc + bias[m];
    }
  }
}

template <typename T>
void linear_backward(std::size_t n, std::size_t in_dim, std::size_t out_dim,
                     std::span<const T> input, std::span<const T> weight,
                     std::span<const T> grad_output, std::span<T> grad_input,
                     std::span<T> grad_weight, std::span<T> grad_bias) {
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t m = 0; m < out_dim; ++m) {
      const T go = grad_output[r * out_dim + m];
      if (!grad_bias.empty()) grad_bias[m] += go;
      for (std::size_t d = 0; d < in_dim; ++d) {
        if (!grad_input.empty()) grad_input[r * in_dim + d] += go * weight[m * in_dim + d];
        if (!grad_weight.empty()) grad_weight[m * in_dim + d] += go * input[r * in_dim + d];
      }
    }
  }
}

template <typename T>
void relu_forward(std::span<const T> input, std::span<T> output) {
  for (std::size_t i = 0; i < input.size(); ++i) {
    output[i] = input[i] > 0 ? input[i] : T{0};
  }
}

template <typename T>
void relu_backward(std::span<const T> input, std::span<const T> grad_output,
                   std::span<T> grad_input) {
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (input[i] > 0) grad_input[i] += grad_output[i];
  }
}

#include "instantiate.inc"

}  // namespace fqc::kernels::reference
