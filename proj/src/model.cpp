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

#include "fqc/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>

#include "fqc/ops.hpp"

namespace fqc {
namespace {

std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                        std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

struct Walk {
  std::size_t channels, height, width;
};

std::string layer_name(const char* prefix, std::size_t index) {
  return std::string(prefix) + std::to_string(index);
}

}  // namespace

void ArchitectureSpec::validate() const {
  if (input.channels == 0 || input.height == 0 || input.width == 0) {
    throw ConfigError("architecture input shape must be positive");
  }
  if (layers.empty() || !std::holds_alternative<ClassifierLayer>(layers.back())) {
    throw ConfigError("architecture must end with a classifier layer");
  }
  Walk w{input.channels, input.height, input.width};
  bool flattened = false;
  std::size_t width = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      if (flattened) throw ConfigError("conv layer after a dense layer");
      if (conv->filters == 0 || conv->kernel_size == 0 || conv->stride == 0) {
        throw ConfigError("conv layer " + std::to_string(i + 1) +
                          " has a zero filter count, kernel size or stride");
      }
      if (conv->kernel_size > w.height + 2 * conv->padding ||
          conv->kernel_size > w.width + 2 * conv->padding) {
        throw ShapeError("conv layer " + std::to_string(i + 1) + " kernel " +
                         std::to_string(conv->kernel_size) + " exceeds input " +
                         std::to_string(w.height) + "x" + std::to_string(w.width));
      }
      w.channels = conv->filters;
      w.height = conv_extent(w.height, conv->kernel_size, conv->stride, conv->padding);
      w.width = conv_extent(w.width, conv->kernel_size, conv->stride, conv->padding);
      if (conv->lrn && conv->lrn->depth == 0) {
        throw ConfigError("lrn depth must be at least 1");
      }
      if (conv->pool) {
        if (conv->pool->window == 0 || conv->pool->stride == 0 ||
            conv->pool->window > w.height || conv->pool->window > w.width) {
          throw ShapeError("pool after conv layer " + std::to_string(i + 1) +
                           " does not fit its " + std::to_string(w.height) + "x" +
                           std::to_string(w.width) + " input");
        }
        w.height = (w.height - conv->pool->window) / conv->pool->stride + 1;
        w.width = (w.width - conv->pool->window) / conv->pool->stride + 1;
      }
    } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
      if (dense->width == 0) throw ConfigError("dense layer width must be positive");
      if (!flattened) {
        width = w.channels * w.height * w.width;
        flattened = true;
      }
      width = dense->width;
    } else {
      const auto& cls = std::get<ClassifierLayer>(layer);
      if (i + 1 != layers.size()) {
        throw ConfigError("classifier must be the last layer");
      }
      if (!flattened) width = w.channels * w.height * w.width;
      if (cls.input_width != width) {
        throw ShapeError("classifier expects " + std::to_string(cls.input_width) +
                         " inputs but the network produces " + std::to_string(width));
      }
    }
  }
}

std::size_t ArchitectureSpec::conv_output_width() const {
  Walk w{input.channels, input.height, input.width};
  for (const auto& layer : layers) {
    const auto* conv = std::get_if<ConvLayer>(&layer);
    if (!conv) break;
    w.channels = conv->filters;
    w.height = conv_extent(w.height, conv->kernel_size, conv->stride, conv->padding);
    w.width = conv_extent(w.width, conv->kernel_size, conv->stride, conv->padding);
    if (conv->pool) {
      w.height = (w.height - conv->pool->window) / conv->pool->stride + 1;
      w.width = (w.width - conv->pool->window) / conv->pool->stride + 1;
    }
  }
  return w.channels * w.height * w.width;
}

std::size_t ArchitectureSpec::feature_width() const {
  const auto& cls = std::get<ClassifierLayer>(layers.back());
  return cls.input_width;
}

std::vector<std::size_t> ArchitectureSpec::conv_filters() const {
  std::vector<std::size_t> out;
  for (const auto& layer : layers) {
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) out.push_back(conv->filters);
  }
  return out;
}

std::vector<std::size_t> ArchitectureSpec::dense_widths() const {
  std::vector<std::size_t> out;
  for (const auto& layer : layers) {
    if (const auto* dense = std::get_if<DenseLayer>(&layer)) out.push_back(dense->width);
  }
  return out;
}

std::vector<ParamInfo> ArchitectureSpec::parameters() const {
  std::vector<ParamInfo> out;
  std::size_t channels = input.channels;
  std::size_t width = conv_output_width();
  std::size_t conv_index = 0, dense_index = 0;
  for (const auto& layer : layers) {
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      const auto name = layer_name("conv", ++conv_index);
      const std::size_t fan_in = channels * conv->kernel_size * conv->kernel_size;
      out.push_back({name + ".weight",
                     {conv->filters, channels, conv->kernel_size, conv->kernel_size},
                     fan_in});
      out.push_back({name + ".bias", {conv->filters}, fan_in});
      channels = conv->filters;
    } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
      const auto name = layer_name("fc", ++dense_index);
      out.push_back({name + ".weight", {dense->width, width}, width});
      out.push_back({name + ".bias", {dense->width}, width});
      width = dense->width;
    } else {
      const auto& cls = std::get<ClassifierLayer>(layer);
      out.push_back({"classifier.w", {cls.input_width}, cls.input_width});
      out.push_back({"classifier.bias", {}, cls.input_width});
    }
  }
  return out;
}

namespace {

bool same_lrn(const std::optional<kernels::LrnParams>& a,
              const std::optional<kernels::LrnParams>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return a->depth == b->depth && a->k == b->k && a->alpha == b->alpha &&
         a->beta == b->beta;
}

bool same_layer(const LayerSpec& a, const LayerSpec& b) {
  if (a.index() != b.index()) return false;
  if (const auto* ca = std::get_if<ConvLayer>(&a)) {
    const auto& cb = std::get<ConvLayer>(b);
    return ca->filters == cb.filters && ca->kernel_size == cb.kernel_size &&
           ca->stride == cb.stride && ca->padding == cb.padding &&
           ca->relu == cb.relu && same_lrn(ca->lrn, cb.lrn) && ca->pool == cb.pool;
  }
  if (const auto* da = std::get_if<DenseLayer>(&a)) {
    const auto& db = std::get<DenseLayer>(b);
    return da->width == db.width && da->relu == db.relu;
  }
  return std::get<ClassifierLayer>(a).input_width ==
         std::get<ClassifierLayer>(b).input_width;
}

}  // namespace

bool operator==(const ArchitectureSpec& a, const ArchitectureSpec& b) {
  return a.input == b.input && a.reduction == b.reduction &&
         a.layers.size() == b.layers.size() &&
         std::equal(a.layers.begin(), a.layers.end(), b.layers.begin(), same_layer);
}

ArchitectureSpec build_default_arch() {
  const kernels::LrnParams lrn{};  // depth 5, k 2, alpha 1e-4, beta 0.75
  const PoolSpec pool{3, 2};
  ArchitectureSpec arch;
  arch.input = {3, 256, 256};
  arch.layers = {
      ConvLayer{96, 11, 4, 2, true, lrn, pool},
      ConvLayer{256, 5, 1, 2, true, lrn, pool},
      ConvLayer{384, 3, 1, 1, true, std::nullopt, std::nullopt},
      ConvLayer{384, 3, 1, 1, true, std::nullopt, std::nullopt},
      ConvLayer{256, 3, 1, 1, true, std::nullopt, pool},
      DenseLayer{4096, true},
      DenseLayer{4096, true},
      ClassifierLayer{4096},
  };
  arch.validate();
  return arch;
}

ArchitectureSpec reduce_arch(const ArchitectureSpec& arch, std::size_t factor) {
  if (factor == 0) throw ConfigError("reduction factor must be positive");
  auto divide = [factor](std::size_t width) {
    if (width % factor != 0) {
      throw ConfigError("reduction factor " + std::to_string(factor) +
                        " does not divide width " + std::to_string(width));
    }
    return width / factor;
  };
  ArchitectureSpec out = arch;
  out.reduction = arch.reduction * factor;
  if (arch.reduction < 4 && out.reduction >= 4) {
    out.input.height /= 2;
    out.input.width /= 2;
  }
  for (auto& layer : out.layers) {
    if (auto* conv = std::get_if<ConvLayer>(&layer)) {
      conv->filters = divide(conv->filters);
    } else if (auto* dense = std::get_if<DenseLayer>(&layer)) {
      dense->width = divide(dense->width);
    } else {
      auto& cls = std::get<ClassifierLayer>(layer);
      cls.input_width = divide(cls.input_width);
    }
  }
  // With no dense layers the classifier width follows the conv stack.
  if (out.dense_widths().empty()) {
    std::get<ClassifierLayer>(out.layers.back()).input_width = out.conv_output_width();
  }
  out.validate();
  return out;
}

ArchitectureSpec build_reduced_arch(std::size_t scale) {
  if (scale != 2 && scale != 4 && scale != 8) {
    throw ConfigError("reduced architecture scale must be 2, 4 or 8, got " +
                      std::to_string(scale));
  }
  return reduce_arch(build_default_arch(), scale);
}

// ---------------------------------------------------------------------------

void ModelParams::add(std::string name, ModelTensor tensor) {
  if (contains(name)) throw ConsistencyError("duplicate parameter " + name);
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(tensor));
}

bool ModelParams::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

ModelTensor& ModelParams::at(const std::string& name) {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ConsistencyError("no parameter named " + name);
  return tensors_[static_cast<std::size_t>(it - names_.begin())];
}

const ModelTensor& ModelParams::at(const std::string& name) const {
  return const_cast<ModelParams*>(this)->at(name);
}

std::size_t ModelParams::element_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

ModelParams ModelParams::zeros(const ArchitectureSpec& arch) {
  arch.validate();
  ModelParams p;
  for (const auto& info : arch.parameters()) p.add(info.name, ModelTensor(info.shape));
  return p;
}

ModelParams ModelParams::init(const ArchitectureSpec& arch, std::uint64_t seed) {
  ModelParams p = zeros(arch);
  std::mt19937_64 rng(seed);
  const auto infos = arch.parameters();
  for (std::size_t i = 0; i < infos.size(); ++i) {
    const auto& info = infos[i];
    const bool is_bias = info.name.ends_with(".bias");
    if (is_bias) continue;
    const bool is_classifier = info.name.starts_with("classifier");
    const double gain = is_classifier ? 3.0 : 6.0;
    const double bound = std::sqrt(gain / static_cast<double>(info.fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : p.tensors_[i].data()) v = static_cast<Real>(dist(rng));
  }
  return p;
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    out.add(names_[i], tensors_[i].clone());
  }
  return out;
}

void ModelParams::set_requires_grad(bool on) {
  for (auto& t : tensors_) t.set_requires_grad(on);
}

void ModelParams::check_against(const ArchitectureSpec& arch) const {
  const auto infos = arch.parameters();
  if (infos.size() != tensors_.size()) {
    throw ConsistencyError("architecture has " + std::to_string(infos.size()) +
                           " parameter tensors, params have " +
                           std::to_string(tensors_.size()));
  }
  for (std::size_t i = 0; i < infos.size(); ++i) {
    if (infos[i].name != names_[i] || infos[i].shape != tensors_[i].shape()) {
      throw ConsistencyError("parameter " + std::to_string(i) + " is " + names_[i] +
                             " " + to_string(tensors_[i].shape()) + ", expected " +
                             infos[i].name + " " + to_string(infos[i].shape));
    }
    if (!all_finite(tensors_[i])) {
      throw ConsistencyError("parameter " + names_[i] + " has non-finite values");
    }
  }
}

bool identical(const ModelParams& a, const ModelParams& b) {
  if (a.names() != b.names()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ta = a.tensors()[i];
    const auto& tb = b.tensors()[i];
    if (ta.shape() != tb.shape()) return false;
    if (!std::equal(ta.data().begin(), ta.data().end(), tb.data().begin(),
                    [](Real x, Real y) {
                      return std::bit_cast<std::uint32_t>(x) ==
                             std::bit_cast<std::uint32_t>(y);
                    })) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

ModelTensor forward_features(const ArchitectureSpec& arch, const ModelParams& params,
                             const ModelTensor& images, Tape<Real>* tape) {
  if (images.rank() != 4 || images.dim(1) != arch.input.channels ||
      images.dim(2) != arch.input.height || images.dim(3) != arch.input.width) {
    throw ShapeError("image batch " + to_string(images.shape()) +
                     " does not match architecture input [N," +
                     std::to_string(arch.input.channels) + "," +
                     std::to_string(arch.input.height) + "," +
                     std::to_string(arch.input.width) + "]");
  }
  ModelTensor x = images;
  std::size_t conv_index = 0, dense_index = 0;
  bool flat = false;
  for (const auto& layer : arch.layers) {
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      const auto name = layer_name("conv", ++conv_index);
      x = ops::conv2d(tape, x, params.at(name + ".weight"), params.at(name + ".bias"),
                      conv->stride, conv->padding);
      if (conv->relu) x = ops::relu(tape, x);
      if (conv->lrn) x = ops::lrn(tape, x, *conv->lrn);
      if (conv->pool) x = ops::maxpool2d(tape, x, conv->pool->window, conv->pool->stride);
    } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
      if (!flat) {
        x = ops::flatten(tape, x);
        flat = true;
      }
      const auto name = layer_name("fc", ++dense_index);
      x = ops::linear(tape, x, params.at(name + ".weight"), params.at(name + ".bias"));
      if (dense->relu) x = ops::relu(tape, x);
    }
  }
  if (!flat) x = ops::flatten(tape, x);
  return x;
}

ModelTensor forward_scores(const ArchitectureSpec& arch, const ModelParams& params,
                           const ModelTensor& images, Tape<Real>* tape) {
  auto features = forward_features(arch, params, images, tape);
  return ops::dot_score(tape, features, params.classifier_w(), params.classifier_bias());
}

ModelTensor encode(const ArchitectureSpec& arch, const ModelParams& params,
                   const ModelTensor& image) {
  if (image.rank() != 4 || image.dim(0) != 1) {
    throw ShapeError("encode expects a single image [1,C,H,W], got " +
                     to_string(image.shape()));
  }
  auto features = forward_features(arch, params, image);
  return ModelTensor({features.size()}, features.values());
}

double score(const ArchitectureSpec& arch, const ModelParams& params,
             const ModelTensor& image) {
  if (image.rank() != 4 || image.dim(0) != 1) {
    throw ShapeError("score expects a single image [1,C,H,W], got " +
                     to_string(image.shape()));
  }
  return forward_scores(arch, params, image).item();
}

}  // namespace fqc
