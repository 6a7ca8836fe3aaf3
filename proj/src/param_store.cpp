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

#include "copyflow/param_store.hpp"

#include <cmath>

#include "copyflow/errors.hpp"

namespace copyflow {

void ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  Tensor zeros(value.shape());
  entries_.push_back(Entry{std::move(name), std::move(value), zeros, zeros});
}

bool ParamStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

const Tensor& ParamStore::get(std::string_view name) const {
  return entries_[index_of(name)].value;
}

void ParamStore::set(std::string_view name, const Tensor& value) {
  Entry& e = entries_[index_of(name)];
  if (!e.value.same_shape(value)) {
    throw DimensionError("parameter '" + e.name + "' has shape " + e.value.shape_string() +
                         ", got " + value.shape_string());
  }
  e.value = value;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

GradientMap ParamStore::zero_gradients() const {
  GradientMap out;
  for (const auto& e : entries_) out.emplace(e.name, Tensor(e.value.shape()));
  return out;
}

void adam_step(ParamStore& params, const GradientMap& grads, const AdamConfig& config) {
  for (const auto& [name, g] : grads) {
    const std::size_t idx = params.index_of(name);
    const auto& e = params.entries()[idx];
    if (!e.value.same_shape(g)) {
      throw DimensionError("gradient for '" + name + "' has shape " + g.shape_string());
    }
    if (!g.all_finite()) throw NumericalError("non-finite gradient for parameter '" + name + "'");
  }
  params.set_step(params.step() + 1);
  const double t = static_cast<double>(params.step());
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (auto& e : params.entries()) {
    auto it = grads.find(e.name);
    const bool has = it != grads.end();
    auto value = e.value.data();
    auto m = e.first_moment.data();
    auto v = e.second_moment.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = has ? it->second[i] : 0.0;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      value[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

void accumulate(GradientMap& dst, const GradientMap& src) {
  for (const auto& [name, g] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) {
      dst.emplace(name, g);
      continue;
    }
    auto d = it->second.data();
    auto s = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  }
}

void scale(GradientMap& grads, double factor) {
  for (auto& [name, g] : grads)
    for (double& x : g.data()) x *= factor;
}

double global_norm(const GradientMap& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.data()) s += x * x;
  return std::sqrt(s);
}

}  // namespace copyflow
