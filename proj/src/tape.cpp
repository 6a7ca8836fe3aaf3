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

#include "copyflow/tape.hpp"

#include "copyflow/errors.hpp"

namespace copyflow {

const Tensor& Var::value() const { return tape->value(id); }
double Var::scalar() const { return tape->value(id)[0]; }
std::size_t Var::size() const { return tape->value(id).size(); }

Tape::Tape(bool record) : record_(record) { nodes_.reserve(4096); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, {}, false});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(const ParamStore& store, std::string_view name) {
  std::string key(name);
  if (auto it = param_cache_.find(key); it != param_cache_.end()) return Var{this, it->second};
  const Tensor& value = store.get(name);
  nodes_.push_back(Node{{}, &value, {}, {}, record_});
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_cache_.emplace(key, id);
  params_.emplace_back(std::move(key), id);
  return Var{this, id};
}

Var Tape::push(Tensor value, bool inputs_need_grad, Backward backward) {
  const bool needs = record_ && inputs_need_grad;
  nodes_.push_back(Node{std::move(value), nullptr, {}, needs ? std::move(backward) : Backward{}, needs});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

Tensor& Tape::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(value(id).shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("loss belongs to a different tape");
  if (!record_) throw ContractError("backward on a tape that does not record gradients");
  if (value(loss.id).size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        value(loss.id).shape_string());
  }
  grad_buffer(loss.id)[0] += 1.0;
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

GradientMap backward(Tape& tape, Var loss, const ParamStore& params) {
  tape.backward(loss);
  GradientMap out = params.zero_gradients();
  for (const auto& [name, id] : tape.bound_params()) {
    if (tape.has_grad(id)) out[name] = tape.grad(id);
  }
  return out;
}

}  // namespace copyflow
