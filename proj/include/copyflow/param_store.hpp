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
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "copyflow/tensor.hpp"

namespace copyflow {

/// Gradients keyed by parameter name. Ordered so reductions are deterministic.
using GradientMap = std::map<std::string, Tensor>;

/// Named parameters plus Adam moment estimates.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor first_moment;
    Tensor second_moment;
  };

  /// Throws ContractError on a duplicate name.
  void add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  /// Overwrites values in place; the shape must match.
  void set(std::string_view name, const Tensor& value);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t step) { step_ = step; }

  GradientMap zero_gradients() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

struct AdamConfig {
  double learning_rate = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update. Parameters missing from `grads` see a zero
/// gradient. NaN/Inf in a gradient throws NumericalError naming the parameter.
void adam_step(ParamStore& params, const GradientMap& grads, const AdamConfig& config);

/// Adds `src` into `dst` (same keys and shapes).
void accumulate(GradientMap& dst, const GradientMap& src);
void scale(GradientMap& grads, double factor);
double global_norm(const GradientMap& grads);

}  // namespace copyflow
