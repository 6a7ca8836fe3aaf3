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

// Plain numeric helpers shared by the differentiable ops and the tests.

/// Shift-stabilised softmax. Throws DomainError on empty input.
std::vector<double> softmax(std::span<const double> scores);

/// sum_l q_l * log(q_l / max(p_l, floor)); terms with q_l == 0 contribute 0.
/// Throws DomainError on negative entries or a non-positive floor.
double kl_divergence(std::span<const double> q, std::span<const double> p, double floor);

namespace ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Sum of same-shaped nodes.
Var add_n(std::span<const Var> terms);

Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);

/// W (m x n) times x (n).
Var matvec(Var w, Var x);
/// X (L x n) times W^T for W (m x n); result L x m.
Var matmul_nt(Var x, Var w);
/// Stacks equal-length vectors into a matrix, one row each.
Var stack(std::span<const Var> rows);
/// One row of a matrix (embedding lookup).
Var row(Var m, std::size_t r);
Var concat(Var a, Var b);

Var sum(Var a);
Var dot(Var a, Var b);
/// Element i of a vector as a scalar node.
Var pick(Var a, std::size_t i);
/// -log(a[i]).
Var neg_log(Var a, std::size_t i);

/// Softmax over `scores`; positions with mask[i] == false get weight 0 and
/// are excluded from the normaliser. An empty mask means no masking.
/// Throws DomainError if every position is masked.
Var softmax(Var scores, const std::vector<bool>& mask = {});

/// s_i = v . tanh(P_i + q) for every row i of P (L x A).
Var additive_scores(Var projected, Var query, Var v);
/// sum_i a_i X_i for weights a (L) and rows of X (L x H).
Var weighted_rows(Var weights, Var x);

/// GRU with the reset gate applied before the hidden-state product of the
/// candidate:
///   r = sigmoid(Wx_r x + Wh_r h + b_r)
///   z = sigmoid(Wx_z x + Wh_z h + b_z)
///   n = tanh(Wx_n x + Wh_n (r * h) + b_n)
///   h' = z * h + (1 - z) * n
/// wx is 3H x D, wh is 3H x H, b is 3H, gate blocks ordered r, z, n.
Var gru_cell(Var x, Var h, Var wx, Var wh, Var b);

/// Differentiable KL(q || p) with p clamped below at `floor`.
Var kl_divergence(Var q, Var p, double floor);

}  // namespace ops
}  // namespace copyflow
