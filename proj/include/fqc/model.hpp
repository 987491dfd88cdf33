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

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fqc/kernels.hpp"
#include "fqc/tape.hpp"
#include "fqc/tensor.hpp"

namespace fqc {

/// Parameters and activations of the quality model are 32-bit.
using Real = float;
using ModelTensor = Tensor<Real>;

struct PoolSpec {
  std::size_t window = 3;
  std::size_t stride = 2;
  bool operator==(const PoolSpec&) const = default;
};

struct ConvLayer {
  std::size_t filters = 0;
  std::size_t kernel_size = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool relu = true;
  std::optional<kernels::LrnParams> lrn;
  std::optional<PoolSpec> pool;
};

struct DenseLayer {
  std::size_t width = 0;
  bool relu = true;
};

/// Final scoring layer: score = w . features + bias.
struct ClassifierLayer {
  std::size_t input_width = 0;
};

using LayerSpec = std::variant<ConvLayer, DenseLayer, ClassifierLayer>;

struct InputShape {
  std::size_t channels = 3;
  std::size_t height = 256;
  std::size_t width = 256;
  bool operator==(const InputShape&) const = default;
};

struct ParamInfo {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;
};

/// Declarative layer stack. `reduction` is the width divisor relative to the
/// full-size network (1 for the default architecture).
struct ArchitectureSpec {
  InputShape input;
  std::vector<LayerSpec> layers;
  std::size_t reduction = 1;

  /// Throws ConfigError/ShapeError unless shapes chain and the classifier
  /// is the single last layer.
  void validate() const;

  /// Named parameter shapes in canonical order.
  std::vector<ParamInfo> parameters() const;

  /// Flattened conv-stack output width (input of the first dense layer).
  std::size_t conv_output_width() const;

  /// Width of the encoding handed to the classifier.
  std::size_t feature_width() const;

  std::vector<std::size_t> conv_filters() const;
  std::vector<std::size_t> dense_widths() const;
};

bool operator==(const ArchitectureSpec& a, const ArchitectureSpec& b);

/// Five conv layers (96, 256, 384, 384, 256 filters), two 4096-wide dense
/// layers and a 4096-input classifier on 3x256x256 images.
ArchitectureSpec build_default_arch();

/// Same topology with widths divided by `scale` (2, 4 or 8); 128x128 input
/// once the total reduction reaches 4.
ArchitectureSpec build_reduced_arch(std::size_t scale);

/// Divides every width of `arch` by `factor`. Composes: reducing by 2 twice
/// equals reducing by 4.
ArchitectureSpec reduce_arch(const ArchitectureSpec& arch, std::size_t factor);

/// Ordered named parameter tensors of one network.
class ModelParams {
 public:
  ModelParams() = default;

  /// Zero-filled tensors with the shapes `arch` dictates.
  static ModelParams zeros(const ArchitectureSpec& arch);

  /// Weights drawn from U(-b, b) with b = sqrt(6 / fan_in) (sqrt(3 / fan_in)
  /// for the classifier), biases zero. Deterministic in `seed`.
  static ModelParams init(const ArchitectureSpec& arch, std::uint64_t seed);

  void add(std::string name, ModelTensor tensor);

  ModelTensor& at(const std::string& name);
  const ModelTensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::string>& names() const { return names_; }
  std::vector<ModelTensor>& tensors() { return tensors_; }
  const std::vector<ModelTensor>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t element_count() const;

  ModelTensor& classifier_w() { return at("classifier.w"); }
  const ModelTensor& classifier_w() const { return at("classifier.w"); }
  ModelTensor& classifier_bias() { return at("classifier.bias"); }
  const ModelTensor& classifier_bias() const { return at("classifier.bias"); }

  /// Deep copy (independent storage).
  ModelParams clone() const;

  void set_requires_grad(bool on);

  /// Throws ConsistencyError unless names and shapes match `arch` exactly
  /// and every value is finite.
  void check_against(const ArchitectureSpec& arch) const;

 private:
  std::vector<std::string> names_;
  std::vector<ModelTensor> tensors_;
};

/// Bit-level equality of names, shapes and values.
bool identical(const ModelParams& a, const ModelParams& b);

/// images [N,C,H,W] -> encodings [N, feature_width].
ModelTensor forward_features(const ArchitectureSpec& arch, const ModelParams& params,
                             const ModelTensor& images, Tape<Real>* tape = nullptr);

/// images [N,C,H,W] -> classifier scores [N].
ModelTensor forward_scores(const ArchitectureSpec& arch, const ModelParams& params,
                           const ModelTensor& images, Tape<Real>* tape = nullptr);

/// Single image [1,C,H,W] -> encoding [feature_width].
ModelTensor encode(const ArchitectureSpec& arch, const ModelParams& params,
                   const ModelTensor& image);

/// Single image [1,C,H,W] -> w . features + bias.
double score(const ArchitectureSpec& arch, const ModelParams& params,
             const ModelTensor& image);

}  // namespace fqc
