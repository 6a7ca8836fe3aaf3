// Copyright 2026 The copyflow Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "copyflow/param_store.hpp"
#include "copyflow/tensor.hpp"

namespace copyflow {

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  double scalar() const;
  std::size_t size() const;
  bool valid() const { return tape != nullptr; }
};

/// Records primitive operations in creation order. Creation order is a
/// topological order, so the backward sweep walks nodes in reverse exactly once.
///
/// A tape built with `record == false` keeps forward values only; it is used for
/// inference and validation passes.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t)>;

  explicit Tape(bool record = true);

  bool recording() const { return record_; }

  Var constant(Tensor value);
  /// Leaf bound to a stored parameter (no copy). Cached per name.
  Var param(const ParamStore& store, std::string_view name);
  /// Appends an op output. `inputs_need_grad` marks whether any input is
  /// differentiable; when false the backward closure is dropped.
  Var push(Tensor value, bool inputs_need_grad, Backward backward);

  const Tensor& value(std::uint32_t id) const;
  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }
  bool has_grad(std::uint32_t id) const { return !nodes_[id].grad.empty(); }
  const Tensor& grad(std::uint32_t id) const { return nodes_[id].grad; }
  /// Zero-initialised on first access.
  Tensor& grad_buffer(std::uint32_t id);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape backward.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::pair<std::string, std::uint32_t>>& bound_params() const {
    return params_;
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    Backward backward;
    bool needs_grad = false;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::uint32_t>> params_;
  std::unordered_map<std::string, std::uint32_t> param_cache_;
};

/// d(loss)/d(param) for every parameter in `params`; parameters not reached from
/// `loss` get exact zeros. Throws ContractError when `loss` is not a scalar.
GradientMap backward(Tape& tape, Var loss, const ParamStore& params);

}  // namespace copyflow
