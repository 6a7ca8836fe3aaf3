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

#include "copyflow/param_store.hpp"

namespace copyflow {

/// Evaluates a loss at `params`; fills `grads` with the analytic gradient when
/// it is non-null. Must be deterministic in `params`.
using LossFunction = std::function<double(const ParamStore& params, GradientMap* grads)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradCheckFloor = 1e-5;

/// Compares analytic gradients with central differences
/// (f(p + eps) - f(p - eps)) / (2 eps) on `sample` coordinates. Coordinates are
/// drawn by picking a parameter tensor uniformly, then an entry uniformly, so
/// small tensors are not drowned out by embedding tables.
/// Throws DomainError when eps <= 0.
GradCheckResult finite_difference_check(const LossFunction& loss, ParamStore params, double eps,
                                        std::size_t sample, std::uint64_t seed = 0);

}  // namespace copyflow
