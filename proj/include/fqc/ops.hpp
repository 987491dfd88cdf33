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

// Differentiable tensor operations.
//
// Every op takes an optional tape as its first argument. With a null tape,
// or when no input requires a gradient, the op is a plain forward
// computation; otherwise it records a backward rule and its output requires
// a gradient.

#include <cstddef>
#include <span>

#include "fqc/kernels.hpp"
#include "fqc/tape.hpp"
#include "fqc/tensor.hpp"

namespace fqc::ops {

/// input [N,C,H,W], kernel [K,C,kh,kw], bias [K] -> [N,K,H',W'] with
/// H' = (H + 2*padding - kh) / stride + 1. Zero padding.
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, std::size_t stride, std::size_t padding);

/// Square-window max pooling; gradient goes to the first maximum in
/// row-major order.
template <typename T>
Tensor<T> maxpool2d(Tape<T>* tape, const Tensor<T>& input, std::size_t window,
                    std::size_t stride);

/// Cross-channel local response normalization:
/// out[c] = in[c] / (k + alpha * sum_{c' in window(c)} in[c']^2)^beta.
template <typename T>
Tensor<T> lrn(Tape<T>* tape, const Tensor<T>& input,
              const kernels::LrnParams& params = {});

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& input);

/// input [N,D], weight [M,D], bias [M] -> [N,M]
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias);

/// features [N,D], w [D], bias (single element) -> scores [N]
template <typename T>
Tensor<T> dot_score(Tape<T>* tape, const Tensor<T>& features, const Tensor<T>& w,
                    const Tensor<T>& bias);

/// [N, ...] -> [N, rest]
template <typename T>
Tensor<T> flatten(Tape<T>* tape, const Tensor<T>& input);

/// Mean margin hinge loss (1/N) * sum max(0, 1 - y_i * s_i), labels in
/// {+1, -1}. The margin form is what makes a correctly signed score with
/// |s| >= 1 lossless.
template <typename T>
Tensor<T> hinge_loss(Tape<T>* tape, const Tensor<T>& scores,
                     std::span<const int> labels);

/// Same data under a new shape with the same element count.
template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& input, Shape shape);

/// Row-wise softmax of [N,M] with max subtraction.
template <typename T>
Tensor<T> softmax(Tape<T>* tape, const Tensor<T>& input);

/// Sum of all elements as a scalar.
template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& input);

}  // namespace fqc::ops

namespace fqc {

/// p <- p - learning_rate * grad(p) for every parameter, then zeroes the
/// gradients. Throws StateError if any parameter has no gradient.
template <typename T>
void sgd_step(std::span<Tensor<T>> params, double learning_rate);

}  // namespace fqc
