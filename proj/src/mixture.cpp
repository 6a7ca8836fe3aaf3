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

#include "copyflow/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "copyflow/errors.hpp"

namespace copyflow {

std::vector<double> project_copy_mass(std::span<const int> tokens, std::span<const double> psi,
                                      std::size_t vocab_size, const std::vector<bool>& mask) {
  if (tokens.size() != psi.size()) throw DimensionError("project_copy_mass: length mismatch");
  std::vector<double> mass(vocab_size, 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const int tok = tokens[i];
    if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_size) {
      throw DimensionError("project_copy_mass: token out of range");
    }
    mass[static_cast<std::size_t>(tok)] += std::exp(psi[i]);
  }
  return mass;
}

std::vector<double> project_copy_mass(const std::vector<std::vector<double>>& distributions,
                                      std::span<const double> psi,
                                      const std::vector<bool>& mask) {
  if (distributions.size() != psi.size()) {
    throw DimensionError("project_copy_mass: length mismatch");
  }
  if (distributions.empty()) return {};
  std::vector<double> mass(distributions[0].size(), 0.0);
  for (std::size_t i = 0; i < distributions.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double w = std::exp(psi[i]);
    for (std::size_t v = 0; v < mass.size(); ++v) mass[v] += distributions[i][v] * w;
  }
  return mass;
}

MixtureValues mix_distribution(std::span<const double> gen_scores,
                               const std::vector<std::vector<double>>& copy_masses) {
  if (gen_scores.empty()) throw DomainError("mix_distribution: no generation component");
  MixtureValues out;
  out.probs.assign(gen_scores.size(), 0.0);
  double gen_mass = 0.0;
  for (std::size_t v = 0; v < gen_scores.size(); ++v) {
    out.probs[v] = std::exp(gen_scores[v]);
    gen_mass += out.probs[v];
  }
  out.component_mass.push_back(gen_mass);
  for (const auto& mass : copy_masses) {
    if (mass.size() != gen_scores.size()) throw DimensionError("mix_distribution: vocab size");
    double total = 0.0;
    for (std::size_t v = 0; v < mass.size(); ++v) {
      out.probs[v] += mass[v];
      total += mass[v];
    }
    out.component_mass.push_back(total);
  }
  double z = 0.0;
  for (double p : out.probs) z += p;
  if (!(z > 0.0) || !std::isfinite(z)) throw DomainError("mix_distribution: degenerate normaliser");
  for (double& p : out.probs) p /= z;
  out.normalizer = z;
  return out;
}

namespace {

struct TermRecord {
  std::uint32_t psi;
  std::vector<int> tokens;
  std::vector<bool> mask;
  std::vector<std::uint32_t> dists;
  std::vector<double> weight;  // exp(psi_i - shift), 0 on masked positions
};

}  // namespace

MixtureDistribution mix(Var gen_scores, std::span<const CopyTerm> terms) {
  Tape& t = *gen_scores.tape;
  const Tensor& g = gen_scores.value();
  const std::size_t vocab = g.size();
  if (vocab == 0) throw DomainError("mix: empty generation scores");

  double shift = *std::max_element(g.data().begin(), g.data().end());
  for (const CopyTerm& term : terms) {
    const EncodedSequence& src = *term.source;
    const Tensor& psi = term.psi.value();
    if (psi.size() != src.size()) throw DimensionError("mix: copy scores do not match source");
    for (std::size_t i = 0; i < psi.size(); ++i)
      if (src.mask.empty() || src.mask[i]) shift = std::max(shift, psi[i]);
  }

  MixtureDistribution out;
  out.log_shift = shift;
  std::vector<double> gen_exp(vocab);
  Tensor mass({vocab});
  double gen_mass = 0.0;
  for (std::size_t v = 0; v < vocab; ++v) {
    gen_exp[v] = std::exp(g[v] - shift);
    mass[v] = gen_exp[v];
    gen_mass += gen_exp[v];
  }
  out.component_mass.push_back(gen_mass);

  bool needs = t.needs_grad(gen_scores.id);
  std::vector<TermRecord> records;
  records.reserve(terms.size());
  for (const CopyTerm& term : terms) {
    const EncodedSequence& src = *term.source;
    const Tensor& psi = term.psi.value();
    TermRecord rec{term.psi.id, src.tokens, src.mask, {}, std::vector<double>(src.size(), 0.0)};
    needs = needs || t.needs_grad(term.psi.id);
    if (src.soft()) {
      if (src.distributions.size() != src.size()) {
        throw DimensionError("mix: soft source needs one distribution per position");
      }
      for (Var d : src.distributions) {
        rec.dists.push_back(d.id);
        needs = needs || t.needs_grad(d.id);
      }
    }
    double term_mass = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (!src.mask.empty() && !src.mask[i]) continue;
      const double w = std::exp(psi[i] - shift);
      rec.weight[i] = w;
      if (src.soft()) {
        const Tensor& p = src.distributions[i].value();
        if (p.size() != vocab) throw DimensionError("mix: soft source vocabulary size");
        double row_mass = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) {
          mass[v] += w * p[v];
          row_mass += p[v];
        }
        term_mass += w * row_mass;
      } else {
        const int tok = src.tokens[i];
        if (tok < 0 || static_cast<std::size_t>(tok) >= vocab) {
          throw DimensionError("mix: copy token out of vocabulary range");
        }
        mass[static_cast<std::size_t>(tok)] += w;
        term_mass += w;
      }
    }
    out.component_mass.push_back(term_mass);
    records.push_back(std::move(rec));
  }

  double z = 0.0;
  for (double m : mass.data()) z += m;
  if (!(z > 0.0) || !std::isfinite(z)) throw DomainError("mix: degenerate normaliser");
  for (double& m : mass.data()) m /= z;
  out.normalizer = z;

  if (!t.recording() || !needs) {
    out.probs = t.push(std::move(mass), false, {});
    return out;
  }
  out.probs = t.push(
      std::move(mass), true,
      [gid = gen_scores.id, gen_exp = std::move(gen_exp), records = std::move(records), z,
       vocab](Tape& t, std::uint32_t self) {
        const Tensor& grad = t.grad(self);
        const Tensor& p = t.value(self);
        double inner = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) inner += grad[v] * p[v];
        std::vector<double> gamma(vocab);
        for (std::size_t v = 0; v < vocab; ++v) gamma[v] = (grad[v] - inner) / z;

        if (t.needs_grad(gid)) {
          auto dg = t.grad_buffer(gid).data();
          for (std::size_t v = 0; v < vocab; ++v) dg[v] += gamma[v] * gen_exp[v];
        }
        for (const TermRecord& rec : records) {
          const bool psi_grad = t.needs_grad(rec.psi);
          double* dpsi = psi_grad ? t.grad_buffer(rec.psi).data().data() : nullptr;
          for (std::size_t i = 0; i < rec.weight.size(); ++i) {
            const double w = rec.weight[i];
            if (w == 0.0) continue;
            if (!rec.dists.empty()) {
              const std::uint32_t did = rec.dists[i];
              const Tensor& pi = t.value(did);
              if (dpsi) {
                double s = 0.0;
                for (std::size_t v = 0; v < vocab; ++v) s += gamma[v] * pi[v];
                dpsi[i] += w * s;
              }
              if (t.needs_grad(did)) {
                auto dd = t.grad_buffer(did).data();
                for (std::size_t v = 0; v < vocab; ++v) dd[v] += gamma[v] * w;
              }
            } else if (dpsi) {
              dpsi[i] += w * gamma[static_cast<std::size_t>(rec.tokens[i])];
            }
          }
        }
      });
  return out;
}

}  // namespace copyflow
