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

#include <span>
#include <vector>

#include "copyflow/tape.hpp"

namespace copyflow {

/// A source sequence a decoder can copy from. For a deterministic source each
/// position holds a token; a soft source carries one probability vector per
/// position instead (the implicit copy case). Positions with mask == false are
/// padding and never receive copy mass.
struct EncodedSequence {
  std::vector<int> tokens;
  std::vector<Var> hidden;
  std::vector<bool> mask;
  std::vector<Var> distributions;

  std::size_t size() const { return hidden.size(); }
  bool soft() const { return !distributions.empty(); }
};

/// Per-step output distribution with its bookkeeping. Component masses are
/// stored relative to exp(log_shift): the true unnormalised mass of
/// component k is component_mass[k] * exp(log_shift).
struct MixtureDistribution {
  Var probs;
  std::vector<double> component_mass;  // [generation, copy source 0, copy source 1, ...]
  double normalizer = 0.0;
  double log_shift = 0.0;

  std::size_t components() const { return component_mass.size(); }
  const Tensor& values() const { return probs.value(); }
};

/// mass(v) = sum_i p_i(v) exp(psi_i) over unmasked positions, deterministic
/// source: p_i is the indicator of tokens[i].
std::vector<double> project_copy_mass(std::span<const int> tokens, std::span<const double> psi,
                                      std::size_t vocab_size, const std::vector<bool>& mask = {});
/// Soft source: one distribution per position.
std::vector<double> project_copy_mass(const std::vector<std::vector<double>>& distributions,
                                      std::span<const double> psi,
                                      const std::vector<bool>& mask = {});

struct MixtureValues {
  std::vector<double> probs;
  std::vector<double> component_mass;
  double normalizer = 0.0;
};

/// p(v) = (exp(gen_v) + sum_s mass_s(v)) / Z with a single shared Z.
/// Throws DomainError when Z is zero or not finite.
MixtureValues mix_distribution(std::span<const double> gen_scores,
                               const std::vector<std::vector<double>>& copy_masses);

/// One copy flow feeding a mixture: scores over the positions of `source`.
struct CopyTerm {
  Var psi;
  const EncodedSequence* source = nullptr;
};

/// Differentiable fused form of project_copy_mass + mix_distribution.
MixtureDistribution mix(Var gen_scores, std::span<const CopyTerm> terms);

}  // namespace copyflow
