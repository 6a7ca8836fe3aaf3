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

#include <cmath>
#include <random>

#include "copyflow/errors.hpp"
#include "copyflow/gradcheck.hpp"
#include "copyflow/ops.hpp"
#include "copyflow/param_store.hpp"
#include "copyflow/tape.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace copyflow;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(-scale, scale);
  for (double& v : t.data()) v = d(rng);
  return t;
}

// Gradient check of a loss built from named parameters by `build`.
template <typename Build>
GradCheckResult check_op(ParamStore params, Build build, std::size_t sample = 60) {
  LossFunction loss = [&](const ParamStore& p, GradientMap* grads) {
    Tape tape(grads != nullptr);
    Var out = build(tape, p);
    if (grads) *grads = backward(tape, out, p);
    return out.scalar();
  };
  return finite_difference_check(loss, std::move(params), 1e-5, sample, 3);
}

}  // namespace

TEST_CASE("tensor shape contract") {
  CHECK(Tensor({2, 3}).size() == 6);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0}), DimensionError);
  Tensor t({2}, std::vector<double>{1.0, std::nan("")});
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("softmax examples") {
  auto two = softmax(std::vector<double>{0.0, 0.0});
  CHECK(two[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(two[1] == doctest::Approx(0.5).epsilon(1e-15));
  for (double c : {-7.0, 0.0, 3.5, 1e3}) {
    auto four = softmax(std::vector<double>{c, c, c, c});
    for (double p : four) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));
  }
  auto three = softmax(std::vector<double>{1.0, 2.0, 3.0});
  CHECK(three[0] == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(std::abs(three[0] - 0.09003) < 1e-5);
  CHECK(std::abs(three[1] - 0.24473) < 1e-5);
  CHECK(std::abs(three[2] - 0.66524) < 1e-5);
  CHECK_THROWS_AS(softmax(std::vector<double>{}), DomainError);
}

TEST_CASE("softmax sums to one, preserves order and ignores shifts") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto s = oracle::random_vec(rng, 1 + trial % 9, 5.0);
    auto p = softmax(s);
    double total = 0.0;
    for (double x : p) total += x;
    CHECK(std::abs(total - 1.0) < 1e-9);
    const double c = std::uniform_real_distribution<double>(-50, 50)(rng);
    auto shifted = s;
    for (double& x : shifted) x += c;
    auto q = softmax(shifted);
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(std::abs(p[i] - q[i]) < 1e-12);
      for (std::size_t j = 0; j < s.size(); ++j)
        if (s[i] < s[j]) CHECK(p[i] <= p[j]);
    }
  }
}

TEST_CASE("gru_cell examples") {
  SUBCASE("zero everything gives zero") {
    Tape tape(false);
    Var h = ops::gru_cell(tape.constant(Tensor({4})), tape.constant(Tensor({3})),
                          tape.constant(Tensor({9, 4})), tape.constant(Tensor({9, 3})),
                          tape.constant(Tensor({9})));
    for (double v : h.value().data()) CHECK(v == 0.0);
  }
  SUBCASE("saturated update gate keeps the previous state") {
    std::mt19937_64 rng(2);
    Tensor b({9});
    for (std::size_t k = 3; k < 6; ++k) b[k] = 50.0;
    Tape tape(false);
    Tensor hprev = random_tensor(rng, {3});
    Var h = ops::gru_cell(tape.constant(random_tensor(rng, {4})), tape.constant(hprev),
                          tape.constant(random_tensor(rng, {9, 4}, 0.5)),
                          tape.constant(random_tensor(rng, {9, 3}, 0.5)), tape.constant(b));
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(h.value()[k] - hprev[k]) < 1e-9);
  }
  SUBCASE("matches the scalar-loop oracle, seed 7") {
    std::mt19937_64 rng(7);
    const Tensor x = random_tensor(rng, {3});
    const Tensor h = random_tensor(rng, {3});
    const Tensor wx = random_tensor(rng, {9, 3});
    const Tensor wh = random_tensor(rng, {9, 3});
    const Tensor b = random_tensor(rng, {9});
    Tape tape(false);
    Var out = ops::gru_cell(tape.constant(x), tape.constant(h), tape.constant(wx),
                            tape.constant(wh), tape.constant(b));
    auto expect = oracle::gru(x.values(), h.values(), oracle::to_mat(wx.values(), 9, 3),
                              oracle::to_mat(wh.values(), 9, 3), b.values());
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(out.value()[k] - expect[k]) < 1e-12);
  }
  SUBCASE("shape mismatch") {
    Tape tape(false);
    CHECK_THROWS_AS(ops::gru_cell(tape.constant(Tensor({5})), tape.constant(Tensor({3})),
                                  tape.constant(Tensor({9, 4})), tape.constant(Tensor({9, 3})),
                                  tape.constant(Tensor({9}))),
                    DimensionError);
  }
}

TEST_CASE("backward examples") {
  std::mt19937_64 rng(5);
  ParamStore p;
  p.add("W", random_tensor(rng, {3, 4}));
  p.add("unused", random_tensor(rng, {2}));
  const Tensor x = random_tensor(rng, {4});

  SUBCASE("linear map: dW[i][j] == x[j]") {
    Tape tape;
    Var loss = ops::sum(ops::matvec(tape.param(p, "W"), tape.constant(x)));
    tape.param(p, "unused");
    auto g = backward(tape, loss, p);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(g.at("W").at(i, j) == x[j]);
    for (double v : g.at("unused").data()) CHECK(v == 0.0);
  }
  SUBCASE("KL(q_const || softmax(s)) matches finite differences") {
    ParamStore s;
    s.add("s", random_tensor(rng, {6}));
    const Tensor q = Tensor::vector(oracle::random_distribution(rng, 6));
    auto r = check_op(s, [&](Tape& t, const ParamStore& ps) {
      return ops::kl_divergence(t.constant(q), ops::softmax(t.param(ps, "s")), 1e-10);
    });
    CHECK(r.max_relative_error < 1e-5);
  }
  SUBCASE("non-scalar loss is a contract error") {
    Tape tape;
    Var v = ops::matvec(tape.param(p, "W"), tape.constant(x));
    CHECK_THROWS_AS(backward(tape, v, p), ContractError);
  }
}

TEST_CASE("every differentiable op passes a finite-difference check") {
  std::mt19937_64 rng(17);
  ParamStore p;
  p.add("a", random_tensor(rng, {5}));
  p.add("b", random_tensor(rng, {5}));
  p.add("M", random_tensor(rng, {4, 5}));
  p.add("N", random_tensor(rng, {3, 5}));
  p.add("v", random_tensor(rng, {3}));
  p.add("pos", Tensor::vector(oracle::random_distribution(rng, 5)));
  p.add("wx", random_tensor(rng, {9, 5}, 0.5));
  p.add("wh", random_tensor(rng, {9, 3}, 0.5));
  p.add("gb", random_tensor(rng, {9}, 0.5));
  p.add("h", random_tensor(rng, {3}));
  auto P = [](Tape& t, const ParamStore& ps, const char* n) { return t.param(ps, n); };

  const std::vector<std::pair<const char*, std::function<Var(Tape&, const ParamStore&)>>> cases = {
      {"add/mul/sub", [&](Tape& t, const ParamStore& ps) {
         return ops::sum(ops::mul(ops::add(P(t, ps, "a"), P(t, ps, "b")),
                                  ops::sub(P(t, ps, "a"), ops::scale(P(t, ps, "b"), 0.3))));
       }},
      {"sigmoid/tanh/exp/log", [&](Tape& t, const ParamStore& ps) {
         Var a = P(t, ps, "a");
         return ops::sum(ops::add(ops::mul(ops::sigmoid(a), ops::tanh(P(t, ps, "b"))),
                                  ops::add(ops::exp(a), ops::log(P(t, ps, "pos")))));
       }},
      {"matvec/dot", [&](Tape& t, const ParamStore& ps) {
         return ops::dot(ops::matvec(P(t, ps, "M"), P(t, ps, "a")),
                         ops::matvec(P(t, ps, "M"), P(t, ps, "b")));
       }},
      {"matmul_nt/stack/row", [&](Tape& t, const ParamStore& ps) {
         std::vector<Var> rows{P(t, ps, "a"), P(t, ps, "b"), ops::tanh(P(t, ps, "a"))};
         Var m = ops::matmul_nt(ops::stack(rows), P(t, ps, "N"));
         return ops::sum(ops::mul(ops::row(m, 1), ops::row(m, 2)));
       }},
      {"concat/pick/neg_log", [&](Tape& t, const ParamStore& ps) {
         Var c = ops::concat(P(t, ps, "v"), P(t, ps, "a"));
         return ops::add(ops::pick(ops::tanh(c), 4), ops::neg_log(ops::softmax(c), 2));
       }},
      {"masked softmax", [&](Tape& t, const ParamStore& ps) {
         Var s = ops::softmax(P(t, ps, "a"), {true, false, true, true, false});
         return ops::dot(s, P(t, ps, "b"));
       }},
      {"additive scores / weighted rows", [&](Tape& t, const ParamStore& ps) {
         std::vector<Var> rows{P(t, ps, "a"), P(t, ps, "b")};
         Var states = ops::stack(rows);
         Var keys = ops::matmul_nt(states, P(t, ps, "N"));
         Var scores = ops::additive_scores(keys, ops::matvec(P(t, ps, "N"), P(t, ps, "b")),
                                           P(t, ps, "v"));
         return ops::sum(ops::weighted_rows(ops::softmax(scores), states));
       }},
      {"gru", [&](Tape& t, const ParamStore& ps) {
         Var h = ops::gru_cell(P(t, ps, "a"), P(t, ps, "h"), P(t, ps, "wx"), P(t, ps, "wh"),
                               P(t, ps, "gb"));
         h = ops::gru_cell(P(t, ps, "b"), h, P(t, ps, "wx"), P(t, ps, "wh"), P(t, ps, "gb"));
         return ops::dot(h, P(t, ps, "v"));
       }},
      {"kl both sides", [&](Tape& t, const ParamStore& ps) {
         return ops::kl_divergence(ops::softmax(P(t, ps, "a")), ops::softmax(P(t, ps, "b")),
                                   1e-10);
       }},
      {"add_n", [&](Tape& t, const ParamStore& ps) {
         std::vector<Var> terms{P(t, ps, "a"), ops::tanh(P(t, ps, "b")), P(t, ps, "a")};
         return ops::dot(ops::add_n(terms), P(t, ps, "b"));
       }},
  };
  for (const auto& [name, build] : cases) {
    CAPTURE(name);
    auto r = check_op(p, build);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradients leave parameters unchanged") {
    ParamStore p;
    p.add("w", Tensor::vector({1.0, -2.0}));
    for (int i = 0; i < 5; ++i) adam_step(p, p.zero_gradients(), {});
    CHECK(p.get("w") == Tensor::vector({1.0, -2.0}));
    CHECK(p.step() == 5);
  }
  SUBCASE("first step moves by about lr") {
    ParamStore p;
    p.add("w", Tensor::scalar(1.0));
    GradientMap g{{"w", Tensor::scalar(1.0)}};
    AdamConfig c;
    c.learning_rate = 0.1;
    adam_step(p, g, c);
    // m_hat = 1, v_hat = 1, step = lr / (1 + eps)
    CHECK(std::abs(p.get("w")[0] - (1.0 - 0.1 / (1.0 + 1e-8))) < 1e-15);
    CHECK(std::abs(p.get("w")[0] - 0.9) < 1e-6);
  }
  SUBCASE("identical runs are bit-identical") {
    auto run = [] {
      std::mt19937_64 rng(9);
      ParamStore p;
      p.add("w", random_tensor(rng, {4}));
      for (int i = 0; i < 20; ++i) {
        GradientMap g{{"w", random_tensor(rng, {4})}};
        adam_step(p, g, {});
      }
      return p.get("w");
    };
    CHECK(run() == run());
  }
  SUBCASE("NaN gradient names the parameter") {
    ParamStore p;
    p.add("enc.Wx", Tensor::scalar(1.0));
    GradientMap g{{"enc.Wx", Tensor::scalar(std::nan(""))}};
    try {
      adam_step(p, g, {});
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("enc.Wx") != std::string::npos);
    }
  }
}

TEST_CASE("param store contract") {
  ParamStore p;
  p.add("x", Tensor({2}));
  CHECK_THROWS_AS(p.add("x", Tensor({2})), ContractError);
  CHECK_THROWS(p.set("x", Tensor({3})));
  CHECK(p.parameter_count() == 2);
}

TEST_CASE("finite_difference_check examples") {
  ParamStore p;
  p.add("p", Tensor::vector({1.0, 2.0}));
  LossFunction quad = [](const ParamStore& ps, GradientMap* g) {
    const Tensor& v = ps.get("p");
    if (g) (*g)["p"] = Tensor::vector({2 * v[0], 2 * v[1]});
    return v[0] * v[0] + v[1] * v[1];
  };
  CHECK(finite_difference_check(quad, p, 1e-5, 20).max_relative_error < 1e-8);
  CHECK_THROWS_AS(finite_difference_check(quad, p, 0.0, 20), DomainError);
  LossFunction wrong = [](const ParamStore& ps, GradientMap* g) {
    const Tensor& v = ps.get("p");
    if (g) (*g)["p"] = Tensor::vector({v[0], v[1]});
    return v[0] * v[0] + v[1] * v[1];
  };
  CHECK(finite_difference_check(wrong, p, 1e-5, 20).max_relative_error > 0.4);
}

TEST_CASE("forward and backward are bit-reproducible") {
  auto run = [] {
    std::mt19937_64 rng(23);
    ParamStore p;
    p.add("wx", random_tensor(rng, {12, 3}));
    p.add("wh", random_tensor(rng, {12, 4}));
    p.add("b", random_tensor(rng, {12}));
    Tape tape;
    Var h = tape.constant(Tensor({4}));
    for (int i = 0; i < 5; ++i)
      h = ops::gru_cell(tape.constant(random_tensor(rng, {3})), h, tape.param(p, "wx"),
                        tape.param(p, "wh"), tape.param(p, "b"));
    Var loss = ops::neg_log(ops::softmax(h), 1);
    return std::make_pair(loss.scalar(), backward(tape, loss, p));
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("no-record tape refuses backward") {
  ParamStore p;
  p.add("w", Tensor::scalar(2.0));
  Tape tape(false);
  Var loss = ops::sum(tape.param(p, "w"));
  CHECK_THROWS_AS(tape.backward(loss), ContractError);
}
