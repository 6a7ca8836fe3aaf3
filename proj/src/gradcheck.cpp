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

#include "copyflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "copyflow/errors.hpp"

namespace copyflow {

GradCheckResult finite_difference_check(const LossFunction& loss, ParamStore params, double eps,
                                        std::size_t sample, std::uint64_t seed) {
  if (!(eps > 0.0)) throw DomainError("finite_difference_check: eps must be positive");
  GradCheckResult result;
  if (params.size() == 0) return result;

  GradientMap analytic;
  loss(params, &analytic);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_param(0, params.size() - 1);
  for (std::size_t s = 0; s < sample; ++s) {
    auto& entry = params.entries()[pick_param(rng)];
    if (entry.value.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick_index(0, entry.value.size() - 1);
    const std::size_t i = pick_index(rng);

    const double original = entry.value[i];
    entry.value[i] = original + eps;
    const double plus = loss(params, nullptr);
    entry.value[i] = original - eps;
    const double minus = loss(params, nullptr);
    entry.value[i] = original;

    const double numeric = (plus - minus) / (2.0 * eps);
    auto it = analytic.find(entry.name);
    const double a = it == analytic.end() ? 0.0 : it->second[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
    const double rel = std::abs(a - numeric) / denom;
    ++result.checked;
    if (rel > result.max_relative_error || result.checked == 1) {
      result.max_relative_error = rel;
      result.worst_param = entry.name;
      result.worst_index = i;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace copyflow
