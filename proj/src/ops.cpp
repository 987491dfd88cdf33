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

#include "fqc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

namespace fqc {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [](T v) { return std::isfinite(v); });
}

template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

}  // namespace fqc

namespace fqc::ops {
namespace {

template <typename T>
bool needs_record(const Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  if (tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->requires_grad(); });
}

template <typename T>
std::span<T> grad_or_empty(Tensor<T>& t) {
  return t.requires_grad() ? t.grad() : std::span<T>{};
}

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) +
                     ", got " + to_string(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, std::size_t stride, std::size_t padding) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(kernel.shape(), 4, "conv2d kernel");
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  kernels::ConvGeometry g;
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.in_h = input.dim(2);
  g.in_w = input.dim(3);
  g.out_channels = kernel.dim(0);
  g.kernel_h = kernel.dim(2);
  g.kernel_w = kernel.dim(3);
  g.stride = stride;
  g.padding = padding;
  if (kernel.dim(1) != g.in_channels || g.kernel_h > g.in_h + 2 * padding ||
      g.kernel_w > g.in_w + 2 * padding) {
    throw ShapeError("conv2d input " + to_string(input.shape()) +
                     " incompatible with kernel " + to_string(kernel.shape()) +
                     " at padding " + std::to_string(padding));
  }
  if (bias.size() != g.out_channels) {
    throw ShapeError("conv2d bias " + to_string(bias.shape()) +
                     " does not match kernel " + to_string(kernel.shape()));
  }

  const bool record = needs_record(tape, {&input, &kernel, &bias});
  Tensor<T> out({g.batch, g.out_channels, g.out_h(), g.out_w()}, record);
  kernels::conv2d_forward<T>(g, input.data(), kernel.data(), bias.data(), out.data());
  if (record) {
    tape->record("conv2d", {input, kernel, bias}, out,
                 [g, input = Tensor<T>(input), kernel = Tensor<T>(kernel), bias = Tensor<T>(bias), out]() mutable {
                   kernels::conv2d_backward<T>(
                       g, input.data(), kernel.data(),
                       std::as_const(out).grad(), grad_or_empty(input),
                       grad_or_empty(kernel), grad_or_empty(bias));
                 });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d(Tape<T>* tape, const Tensor<T>& input, std::size_t window,
                    std::size_t stride) {
  require_rank(input.shape(), 4, "maxpool2d input");
  if (window == 0 || stride == 0) {
    throw ShapeError("maxpool2d window and stride must be positive");
  }
  kernels::PoolGeometry g;
  g.batch = input.dim(0);
  g.channels = input.dim(1);
  g.in_h = input.dim(2);
  g.in_w = input.dim(3);
  g.window = window;
  g.stride = stride;
  if (window > g.in_h || window > g.in_w) {
    throw ShapeError("maxpool2d window " + std::to_string(window) +
                     " larger than input " + to_string(input.shape()));
  }
  const bool record = needs_record(tape, {&input});
  Tensor<T> out({g.batch, g.channels, g.out_h(), g.out_w()}, record);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  kernels::maxpool2d_forward<T>(g, input.data(), out.data(), *argmax);
  if (record) {
    tape->record("maxpool2d", {input}, out, [g, input = Tensor<T>(input), out, argmax]() mutable {
      kernels::maxpool2d_backward<T>(g, *argmax, std::as_const(out).grad(),
                                     input.grad());
    });
  }
  return out;
}

template <typename T>
Tensor<T> lrn(Tape<T>* tape, const Tensor<T>& input, const kernels::LrnParams& params) {
  require_rank(input.shape(), 4, "lrn input");
  if (params.depth == 0) throw ConfigError("lrn depth must be at least 1");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  const bool record = needs_record(tape, {&input});
  Tensor<T> out(input.shape(), record);
  auto scale = std::make_shared<std::vector<T>>(input.size());
  if (!kernels::lrn_forward<T>(batch, channels, plane, params, input.data(),
                               out.data(), *scale)) {
    throw NumericError("lrn denominator is not positive (k=" +
                       std::to_string(params.k) +
                       ", alpha=" + std::to_string(params.alpha) + ")");
  }
  if (record) {
    tape->record("lrn", {input}, out,
                 [batch, channels, plane, params, input = Tensor<T>(input), out, scale]() mutable {
                   kernels::lrn_backward<T>(batch, channels, plane, params,
                                            input.data(), *scale,
                                            std::as_const(out).grad(), input.grad());
                 });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& input) {
  const bool record = needs_record(tape, {&input});
  Tensor<T> out(input.shape(), record);
  kernels::relu_forward<T>(input.data(), out.data());
  if (record) {
    tape->record("relu", {input}, out, [input = Tensor<T>(input), out]() mutable {
      kernels::relu_backward<T>(input.data(), std::as_const(out).grad(),
                                input.grad());
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  require_rank(input.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  const std::size_t n = input.dim(0), in_dim = input.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in_dim) {
    throw ShapeError("linear input " + to_string(input.shape()) +
                     " incompatible with weight " + to_string(weight.shape()));
  }
  if (bias.size() != out_dim) {
    throw ShapeError("linear bias " + to_string(bias.shape()) +
                     " does not match weight " + to_string(weight.shape()));
  }
  const bool record = needs_record(tape, {&input, &weight, &bias});
  Tensor<T> out({n, out_dim}, record);
  kernels::linear_forward<T>(n, in_dim, out_dim, input.data(), weight.data(),
                             bias.data(), out.data());
  if (record) {
    tape->record("linear", {input, weight, bias}, out,
                 [n, in_dim, out_dim, input = Tensor<T>(input), weight = Tensor<T>(weight), bias = Tensor<T>(bias), out]() mutable {
                   kernels::linear_backward<T>(
                       n, in_dim, out_dim, input.data(), weight.data(),
                       std::as_const(out).grad(), grad_or_empty(input),
                       grad_or_empty(weight), grad_or_empty(bias));
                 });
  }
  return out;
}

template <typename T>
Tensor<T> dot_score(Tape<T>* tape, const Tensor<T>& features, const Tensor<T>& w,
                    const Tensor<T>& bias) {
  require_rank(features.shape(), 2, "dot_score features");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (w.size() != d || bias.size() != 1) {
    throw ShapeError("dot_score features " + to_string(features.shape()) +
                     " incompatible with classifier " + to_string(w.shape()) +
                     " / bias " + to_string(bias.shape()));
  }
  const bool record = needs_record(tape, {&features, &w, &bias});
  Tensor<T> out({n}, record);
  for (std::size_t r = 0; r < n; ++r) {
    T acc = 0;
    for (std::size_t i = 0; i < d; ++i) acc += features[r * d + i] * w[i];
    out[r] = acc + bias[0];
  }
  if (record) {
    tape->record("dot_score", {features, w, bias}, out,
                 [n, d, features = Tensor<T>(features), w = Tensor<T>(w), bias = Tensor<T>(bias), out]() mutable {
                   auto go = std::as_const(out).grad();
                   auto gf = grad_or_empty(features);
                   auto gw = grad_or_empty(w);
                   auto gb = grad_or_empty(bias);
                   for (std::size_t r = 0; r < n; ++r) {
                     if (!gb.empty()) gb[0] += go[r];
                     for (std::size_t i = 0; i < d; ++i) {
                       if (!gf.empty()) gf[r * d + i] += go[r] * w[i];
                       if (!gw.empty()) gw[i] += go[r] * features[r * d + i];
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> flatten(Tape<T>* tape, const Tensor<T>& input) {
  if (input.rank() < 1) throw ShapeError("flatten needs rank >= 1");
  const std::size_t n = input.dim(0);
  const bool record = needs_record(tape, {&input});
  Tensor<T> out({n, input.size() / n}, input.values(), record);
  if (record) {
    tape->record("flatten", {input}, out, [input = Tensor<T>(input), out]() mutable {
      auto go = std::as_const(out).grad();
      auto gi = input.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& input, Shape shape) {
  if (numel(shape) != input.size()) {
    throw ShapeError("cannot reshape " + to_string(input.shape()) + " to " +
                     to_string(shape));
  }
  const bool record = needs_record(tape, {&input});
  Tensor<T> out(std::move(shape), input.values(), record);
  if (record) {
    tape->record("reshape", {input}, out, [input = Tensor<T>(input), out]() mutable {
      auto go = std::as_const(out).grad();
      auto gi = input.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> hinge_loss(Tape<T>* tape, const Tensor<T>& scores,
                     std::span<const int> labels) {
  if (labels.empty() || labels.size() != scores.size()) {
    throw ShapeError("hinge_loss needs one label per score: " +
                     std::to_string(labels.size()) + " labels for scores " +
                     to_string(scores.shape()));
  }
  for (int y : labels) {
    if (y != 1 && y != -1) {
      throw LabelError("hinge_loss label " + std::to_string(y) +
                       " is not +1 or -1");
    }
  }
  const std::size_t n = labels.size();
  const bool record = needs_record(tape, {&scores});
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += std::max(T{0}, T{1} - static_cast<T>(labels[i]) * scores[i]);
  }
  Tensor<T> out(Shape{}, {total / static_cast<T>(n)}, record);
  if (record) {
    std::vector<int> y(labels.begin(), labels.end());
    tape->record("hinge_loss", {scores}, out, [y, scores = Tensor<T>(scores), out]() mutable {
      const T go = std::as_const(out).grad()[0];
      auto gs = scores.grad();
      const T inv_n = T{1} / static_cast<T>(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) {
        const T label = static_cast<T>(y[i]);
        if (T{1} - label * scores[i] > 0) gs[i] += -label * inv_n * go;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(Tape<T>* tape, const Tensor<T>& input) {
  require_rank(input.shape(), 2, "softmax input");
  const std::size_t rows = input.dim(0), cols = input.dim(1);
  const bool record = needs_record(tape, {&input});
  Tensor<T> out(input.shape(), record);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = input.data().data() + r * cols;
    T* y = out.data().data() + r * cols;
    const T peak = *std::max_element(x, x + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - peak);
      total += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  if (record) {
    tape->record("softmax", {input}, out, [rows, cols, input = Tensor<T>(input), out]() mutable {
      auto go = std::as_const(out).grad();
      auto gi = input.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        T inner = 0;
        for (std::size_t c = 0; c < cols; ++c) inner += go[r * cols + c] * out[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          gi[r * cols + c] += out[r * cols + c] * (go[r * cols + c] - inner);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& input) {
  const bool record = needs_record(tape, {&input});
  T total = 0;
  for (T v : input.data()) total += v;
  Tensor<T> out(Shape{}, {total}, record);
  if (record) {
    tape->record("sum", {input}, out, [input = Tensor<T>(input), out]() mutable {
      const T go = std::as_const(out).grad()[0];
      for (T& g : input.grad()) g += go;
    });
  }
  return out;
}

#define FQC_INSTANTIATE_OPS(T)                                                     \
  template Tensor<T> conv2d(Tape<T>*, const Tensor<T>&, const Tensor<T>&,          \
                            const Tensor<T>&, std::size_t, std::size_t);           \
  template Tensor<T> maxpool2d(Tape<T>*, const Tensor<T>&, std::size_t,            \
                               std::size_t);                                       \
  template Tensor<T> lrn(Tape<T>*, const Tensor<T>&, const kernels::LrnParams&);   \
  template Tensor<T> relu(Tape<T>*, const Tensor<T>&);                             \
  template Tensor<T> linear(Tape<T>*, const Tensor<T>&, const Tensor<T>&,          \
                            const Tensor<T>&);                                     \
  template Tensor<T> dot_score(Tape<T>*, const Tensor<T>&, const Tensor<T>&,       \
                               const Tensor<T>&);                                  \
  template Tensor<T> flatten(Tape<T>*, const Tensor<T>&);                          \
  template Tensor<T> reshape(Tape<T>*, const Tensor<T>&, Shape);                   \
  template Tensor<T> hinge_loss(Tape<T>*, const Tensor<T>&, std::span<const int>); \
  template Tensor<T> softmax(Tape<T>*, const Tensor<T>&);                          \
  template Tensor<T> sum(Tape<T>*, const Tensor<T>&);

FQC_INSTANTIATE_OPS(float)
FQC_INSTANTIATE_OPS(double)

}  // namespace fqc::ops

namespace fqc {

template <typename T>
void sgd_step(std::span<Tensor<T>> params, double learning_rate) {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  for (const auto& p : params) {
    if (!p.has_grad()) {
      throw StateError("sgd_step: parameter of shape " + to_string(p.shape()) +
                       " has no gradient");
    }
  }
  const T lr = static_cast<T>(learning_rate);
  for (auto& p : params) {
    auto data = p.data();
    auto grad = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * grad[i];
    p.zero_grad();
  }
}

template void sgd_step(std::span<Tensor<float>>, double);
template void sgd_step(std::span<Tensor<double>>, double);

}  // namespace fqc
