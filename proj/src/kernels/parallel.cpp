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
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fqc/kernels.hpp"

namespace fqc::kernels {

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

using Index = std::ptrdiff_t;

// Unrolls the column matrix of one image: rows are (c, i, j) receptive-field
// offsets, columns are output positions. Out-of-image taps are zero.
template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* col) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), positions = oh * ow;
  const Index rows = static_cast<Index>(g.in_channels * g.kernel_h * g.kernel_w);
  const auto pad = static_cast<long>(g.padding);
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < rows; ++r) {
    const std::size_t c = r / (g.kernel_h * g.kernel_w);
    const std::size_t i = (r / g.kernel_w) % g.kernel_h;
    const std::size_t j = r % g.kernel_w;
    const T* plane = image + c * g.in_h * g.in_w;
    T* dst = col + r * positions;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const long y = static_cast<long>(oy * g.stride + i) - pad;
      T* row = dst + oy * ow;
      if (y < 0 || y >= static_cast<long>(g.in_h)) {
        std::fill(row, row + ow, T{0});
        continue;
      }
      const T* src = plane + y * g.in_w;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const long x = static_cast<long>(ox * g.stride + j) - pad;
        row[ox] = (x < 0 || x >= static_cast<long>(g.in_w)) ? T{0} : src[x];
      }
    }
  }
}

// Inverse of im2col: adds each column entry back onto its source pixel.
// Parallel over channels, so every pixel has exactly one writer.
template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* image) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), positions = oh * ow;
  const auto pad = static_cast<long>(g.padding);
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < static_cast<Index>(g.in_channels); ++c) {
    T* plane = image + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const T* src = col + ((c * g.kernel_h + i) * g.kernel_w + j) * positions;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long y = static_cast<long>(oy * g.stride + i) - pad;
          if (y < 0 || y >= static_cast<long>(g.in_h)) continue;
          T* dst = plane + y * g.in_w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long x = static_cast<long>(ox * g.stride + j) - pad;
            if (x < 0 || x >= static_cast<long>(g.in_w)) continue;
            dst[x] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 16;

// out[m, p] = init[m] + sum_r a(m, r) * b[r, p] for an a-block of kRowBlock
// rows and a b-block of kColBlock columns. `a_row_stride`/`a_col_stride`
// select A or its transpose. The sum runs over r in ascending order.
template <typename T, std::size_t RB, std::size_t CB>
inline void gemm_tile(std::size_t depth, const T* a, std::size_t a_row_stride,
                      std::size_t a_col_stride, const T* b, std::size_t ldb,
                      const T* init, T* out, std::size_t ldo) {
  T acc[RB][CB];
  for (std::size_t m = 0; m < RB; ++m) {
    for (std::size_t p = 0; p < CB; ++p) acc[m][p] = init ? init[m] : T{0};
  }
  for (std::size_t r = 0; r < depth; ++r) {
    const T* brow = b + r * ldb;
    for (std::size_t m = 0; m < RB; ++m) {
      const T w = a[m * a_row_stride + r * a_col_stride];
#pragma omp simd
      for (std::size_t p = 0; p < CB; ++p) acc[m][p] += w * brow[p];
    }
  }
  for (std::size_t m = 0; m < RB; ++m) {
    for (std::size_t p = 0; p < CB; ++p) out[m * ldo + p] = acc[m][p];
  }
}

// Generic edge tile with runtime extents.
template <typename T>
inline void gemm_edge(std::size_t rows, std::size_t cols, std::size_t depth,
                      const T* a, std::size_t a_row_stride, std::size_t a_col_stride,
                      const T* b, std::size_t ldb, const T* init, T* out,
                      std::size_t ldo) {
  for (std::size_t m = 0; m < rows; ++m) {
    for (std::size_t p = 0; p < cols; ++p) {
      T acc = init ? init[m] : T{0};
      for (std::size_t r = 0; r < depth; ++r) {
        acc += a[m * a_row_stride + r * a_col_stride] * b[r * ldb + p];
      }
      out[m * ldo + p] = acc;
    }
  }
}

// out[M, P] = init + op(A)[M, R] * B[R, P]. Each output element belongs to a
// single tile and is reduced over r in order, independent of scheduling.
template <typename T>
void gemm(std::size_t rows, std::size_t cols, std::size_t depth, const T* a,
          std::size_t a_row_stride, std::size_t a_col_stride, const T* b,
          const T* init, T* out) {
  const std::size_t row_tiles = (rows + kRowBlock - 1) / kRowBlock;
  const std::size_t col_tiles = (cols + kColBlock - 1) / kColBlock;
  const auto tiles = static_cast<Index>(row_tiles * col_tiles);
#pragma omp parallel for schedule(static)
  for (Index t = 0; t < tiles; ++t) {
    const std::size_t m0 = (t / col_tiles) * kRowBlock;
    const std::size_t p0 = (t % col_tiles) * kColBlock;
    const std::size_t mr = std::min(kRowBlock, rows - m0);
    const std::size_t pc = std::min(kColBlock, cols - p0);
    const T* a_blk = a + m0 * a_row_stride;
    const T* init_blk = init ? init + m0 : nullptr;
    T* out_blk = out + m0 * cols + p0;
    if (mr == kRowBlock && pc == kColBlock) {
      gemm_tile<T, kRowBlock, kColBlock>(depth, a_blk, a_row_stride, a_col_stride,
                                         b + p0, cols, init_blk, out_blk, cols);
    } else {
      gemm_edge(mr, pc, depth, a_blk, a_row_stride, a_col_stride, b + p0, cols,
                init_blk, out_blk, cols);
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> kernel, std::span<const T> bias,
                    std::span<T> output) {
  const std::size_t positions = g.out_h() * g.out_w();
  const std::size_t depth = g.in_channels * g.kernel_h * g.kernel_w;
  std::vector<T> col(depth * positions);
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(g, input.data() + n * g.in_channels * g.in_h * g.in_w, col.data());
    gemm(g.out_channels, positions, depth, kernel.data(), depth, 1, col.data(),
         bias.data(), output.data() + n * g.out_channels * positions);
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> kernel, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_kernel,
                     std::span<T> grad_bias) {
  const std::size_t positions = g.out_h() * g.out_w();
  const std::size_t depth = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t image_size = g.in_channels * g.in_h * g.in_w;
  std::vector<T> col(depth * positions);
  std::vector<T> dcol;
  if (!grad_input.empty()) dcol.resize(depth * positions);

  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* go = grad_output.data() + n * g.out_channels * positions;
    if (!grad_bias.empty()) {
#pragma omp parallel for schedule(static)
      for (Index k = 0; k < static_cast<Index>(g.out_channels); ++k) {
        T sum = 0;
        for (std::size_t p = 0; p < positions; ++p) sum += go[k * positions + p];
        grad_bias[k] += sum;
      }
    }
    if (!grad_kernel.empty()) {
      im2col(g, input.data() + n * image_size, col.data());
      const auto cells = static_cast<Index>(g.out_channels * depth);
#pragma omp parallel for schedule(static)
      for (Index cell = 0; cell < cells; ++cell) {
        const std::size_t k = cell / depth, r = cell % depth;
        const T* a = go + k * positions;
        const T* b = col.data() + r * positions;
        T sum = 0;
#pragma omp simd reduction(+ : sum)
        for (std::size_t p = 0; p < positions; ++p) sum += a[p] * b[p];
        grad_kernel[cell] += sum;
      }
    }
    if (!grad_input.empty()) {
      // dcol[r, p] = sum_k kernel[k, r] * go[k, p]
      gemm(depth, positions, g.out_channels, kernel.data(), 1, depth, go,
           static_cast<const T*>(nullptr), dcol.data());
      col2im_add(g, dcol.data(), grad_input.data() + n * image_size);
    }
  }
}

template <typename T>
void maxpool2d_forward(const PoolGeometry& g, std::span<const T> input,
                       std::span<T> output, std::span<std::size_t> argmax) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t in_plane = g.in_h * g.in_w;
#pragma omp parallel for schedule(static)
  for (Index plane = 0; plane < static_cast<Index>(g.batch * g.channels); ++plane) {
    const std::size_t base = plane * in_plane;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + oy * g.stride * g.in_w + ox * g.stride;
        T best_value = input[best];
        for (std::size_t i = 0; i < g.window; ++i) {
          const std::size_t row = base + (oy * g.stride + i) * g.in_w + ox * g.stride;
          for (std::size_t j = 0; j < g.window; ++j) {
            if (input[row + j] > best_value) {
              best_value = input[row + j];
              best = row + j;
            }
          }
        }
        const std::size_t out_idx = (plane * oh + oy) * ow + ox;
        output[out_idx] = best_value;
        argmax[out_idx] = best;
      }
    }
  }
}

template <typename T>
void maxpool2d_backward(const PoolGeometry& g, std::span<const std::size_t> argmax,
                        std::span<const T> grad_output, std::span<T> grad_input) {
  // Overlapping windows can share an argmax, so each plane is scattered by
  // one thread in output order.
  const std::size_t out_plane = g.out_h() * g.out_w();
#pragma omp parallel for schedule(static)
  for (Index plane = 0; plane < static_cast<Index>(g.batch * g.channels); ++plane) {
    for (std::size_t i = plane * out_plane; i < (plane + 1) * out_plane; ++i) {
      grad_input[argmax[i]] += grad_output[i];
    }
  }
}

template <typename T>
bool lrn_forward(std::size_t batch, std::size_t channels, std::size_t plane,
                 const LrnParams& p, std::span<const T> input, std::span<T> output,
                 std::span<T> scale) {
  const std::size_t before = lrn_before(p.depth), after = lrn_after(p.depth);
  const T k = static_cast<T>(p.k), alpha = static_cast<T>(p.alpha),
          beta = static_cast<T>(p.beta);
  int bad = 0;
#pragma omp parallel for schedule(static) reduction(| : bad)
  for (Index nc = 0; nc < static_cast<Index>(batch * channels); ++nc) {
    const std::size_t n = nc / channels, c = nc % channels;
    const std::size_t lo = c >= before ? c - before : 0;
    const std::size_t hi = std::min(channels - 1, c + after);
    const T* x = input.data() + n * channels * plane;
    for (std::size_t s = 0; s < plane; ++s) {
      T sum = 0;
      for (std::size_t cc = lo; cc <= hi; ++cc) {
        const T v = x[cc * plane + s];
        sum += v * v;
      }
      const std::size_t idx = nc * plane + s;
      const T d = k + alpha * sum;
      bad |= !(d > 0);
      scale[idx] = d;
      output[idx] = input[idx] * std::pow(d, -beta);
    }
  }
  return bad == 0;
}

template <typename T>
void lrn_backward(std::size_t batch, std::size_t channels, std::size_t plane,
                  const LrnParams& p, std::span<const T> input,
                  std::span<const T> scale, std::span<const T> grad_output,
                  std::span<T> grad_input) {
  const std::size_t before = lrn_before(p.depth), after = lrn_after(p.depth);
  const T alpha = static_cast<T>(p.alpha), beta = static_cast<T>(p.beta);
  // ratio[i] = g[i] * x[i] * scale[i]^(-beta - 1), shared by every window.
  std::vector<T> ratio(input.size());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(input.size()); ++i) {
    ratio[i] = grad_output[i] * input[i] * std::pow(scale[i], -beta - 1);
  }
#pragma omp parallel for schedule(static)
  for (Index nj = 0; nj < static_cast<Index>(batch * channels); ++nj) {
    const std::size_t n = nj / channels, j = nj % channels;
    const std::size_t lo = j >= after ? j - after : 0;
    const std::size_t hi = std::min(channels - 1, j + before);
    const T* r = ratio.data() + n * channels * plane;
    for (std::size_t s = 0; s < plane; ++s) {
      T cross = 0;
      for (std::size_t c = lo; c <= hi; ++c) cross += r[c * plane + s];
      const std::size_t idx = nj * plane + s;
      grad_input[idx] += grad_output[idx] * std::pow(scale[idx], -beta) -
                         2 * alpha * beta * input[idx] * cross;
    }
  }
}

template <typename T>
void linear_forward(std::size_t n, std::size_t in_dim, std::size_t out_dim,
                    std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output) {
#pragma omp parallel for schedule(static)
  for (Index m = 0; m < static_cast<Index>(out_dim); ++m) {
    const T* w = weight.data() + m * in_dim;
    for (std::size_t r = 0; r < n; ++r) {
      const T* x = input.data() + r * in_dim;
      T acc = 0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t d = 0; d < in_dim; ++d) acc += x[d] * w[d];
      output[r * out_dim + m] = acc + bias[m];
    }
  }
}

template <typename T>
void linear_backward(std::size_t n, std::size_t in_dim, std::size_t out_dim,
                     std::span<const T> input, std::span<const T> weight,
                     std::span<const T> grad_output, std::span<T> grad_input,
                     std::span<T> grad_weight, std::span<T> grad_bias) {
  if (!grad_weight.empty() || !grad_bias.empty()) {
#pragma omp parallel for schedule(static)
    for (Index m = 0; m < static_cast<Index>(out_dim); ++m) {
      for (std::size_t r = 0; r < n; ++r) {
        const T go = grad_output[r * out_dim + m];
        if (!grad_bias.empty()) grad_bias[m] += go;
        if (grad_weight.empty()) continue;
        T* gw = grad_weight.data() + m * in_dim;
        const T* x = input.data() + r * in_dim;
#pragma omp simd
        for (std::size_t d = 0; d < in_dim; ++d) gw[d] += go * x[d];
      }
    }
  }
  if (!grad_input.empty()) {
    constexpr std::size_t kChunk = 256;
    const std::size_t chunks = (in_dim + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static)
    for (Index t = 0; t < static_cast<Index>(n * chunks); ++t) {
      const std::size_t r = t / chunks;
      const std::size_t d0 = (t % chunks) * kChunk;
      const std::size_t d1 = std::min(in_dim, d0 + kChunk);
      T* gi = grad_input.data() + r * in_dim;
      for (std::size_t m = 0; m < out_dim; ++m) {
        const T go = grad_output[r * out_dim + m];
        const T* w = weight.data() + m * in_dim;
#pragma omp simd
        for (std::size_t d = d0; d < d1; ++d) gi[d] += go * w[d];
      }
    }
  }
}

template <typename T>
void relu_forward(std::span<const T> input, std::span<T> output) {
#pragma omp parallel for simd schedule(static)
  for (Index i = 0; i < static_cast<Index>(input.size()); ++i) {
    output[i] = input[i] > 0 ? input[i] : T{0};
  }
}

template <typename T>
void relu_backward(std::span<const T> input, std::span<const T> grad_output,
                   std::span<T> grad_input) {
#pragma omp parallel for simd schedule(static)
  for (Index i = 0; i < static_cast<Index>(input.size()); ++i) {
    grad_input[i] += input[i] > 0 ? grad_output[i] : T{0};
  }
}

#include "instantiate.inc"

}  // namespace fqc::kernels
