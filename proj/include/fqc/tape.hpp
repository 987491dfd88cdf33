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

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fqc/tensor.hpp"

namespace fqc {

/// Records differentiable operations in execution order and replays them in
/// reverse to populate gradients.
///
/// A tape belongs to exactly one training step: build it during the forward
/// pass, call backward() once, then drop it.
template <typename T>
class Tape {
 public:
  /// Reads the output gradient and accumulates into the inputs' gradients.
  using BackwardFn = std::function<void()>;

  struct Node {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  void record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output,
              BackwardFn backward) {
    if (consumed_) {
      throw GraphError("cannot record '" + op + "' on a consumed tape");
    }
    producer_[output.id()] = nodes_.size();
    nodes_.push_back(
        Node{std::move(op), std::move(inputs), std::move(output),
             std::move(backward)});
  }

  bool contains(const Tensor<T>& t) const {
    return producer_.find(t.id()) != producer_.end();
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  bool consumed() const noexcept { return consumed_; }

  /// Seeds d(loss)/d(loss) = 1 and runs every node up to and including the
  /// loss's producer in reverse order. Gradients accumulate: callers zero
  /// parameter gradients between steps.
  void backward(Tensor<T>& loss) {
    if (loss.size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " +
                       to_string(loss.shape()));
    }
    auto it = producer_.find(loss.id());
    if (it == producer_.end()) {
      throw GraphError("loss tensor was not produced on this tape");
    }
    if (consumed_) {
      throw GraphError("backward() called twice on the same tape");
    }
    consumed_ = true;
    loss.grad()[0] += T{1};
    for (std::size_t i = it->second + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.output.has_grad()) {
        continue;  // not on any path to the loss
      }
      node.backward();
    }
  }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const void*, std::size_t> producer_;
  bool consumed_ = false;
};

}  // namespace fqc
