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
#include "copyflow/model.hpp"
#include "copyflow/ops.hpp"
#include "copyflow/vocab.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace copyflow;
using oracle::Mat;
using oracle::Vec;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.embed = 3;
  c.hidden = 4;
  c.utterance_len = 4;
  c.span_len = 3;
  return c;
}

ParamStore random_params(const ModelConfig& c, std::uint64_t seed, double scale = 0.5) {
  ParamStore p;
  init_params(p, c, seed);
  std::mt19937_64 rng(seed + 1000);
  std::uniform_real_distribution<double> d(-scale, scale);
  for (auto& e : p.entries())
    for (double& v : e.value.data()) v = d(rng);
  return p;
}

Mat mat(const ParamStore& p, const std::string& name) {
  const Tensor& t = p.get(name);
  return oracle::to_mat(t.values(), t.rows(), t.cols());
}
Vec vec(const ParamStore& p, const std::string& name) { return p.get(name).values(); }

Vec concat(const Vec& a, const Vec& b) {
  Vec out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Scalar re-implementation of the context encoder.
std::vector<Vec> oracle_encode(const ParamStore& p, const std::string& net,
                               const std::vector<int>& tokens, std::size_t hidden) {
  const Mat emb = mat(p, net + ".emb");
  std::vector<Vec> out;
  Vec h(hidden, 0.0);
  for (int tok : tokens) {
    if (tok != Vocabulary::kPad)
      h = oracle::gru(emb[tok], h, mat(p, net + ".enc.Wx"), mat(p, net + ".enc.Wh"),
                      vec(p, net + ".enc.b"));
    out.push_back(h);
  }
  return out;
}

struct OracleSource {
  std::vector<int> tokens;
  std::vector<Vec> hidden;
  std::vector<bool> mask;
};

// Scalar re-implementation of one teacher-forced decoder pass; returns the
// probability assigned to each target.
std::vector<double> oracle_decode(const ParamStore& p, const std::string& dec,
                                  const std::string& emb_name, const std::vector<Vec>& attn_states,
                                  const std::vector<bool>& attn_mask,
                                  const std::vector<std::pair<std::string, OracleSource>>& copies,
                                  Vec h, const std::vector<int>& targets) {
  const Mat emb = mat(p, emb_name);
  const Mat w1 = mat(p, dec + ".attn.W1"), w2 = mat(p, dec + ".attn.W2");
  const Vec v1 = vec(p, dec + ".attn.v1");
  const Mat w3 = mat(p, dec + ".out.W3");
  std::vector<double> out;
  int prev = Vocabulary::kGo;
  for (int target : targets) {
    std::vector<double> scores;
    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < attn_states.size(); ++i) {
      if (!attn_mask[i]) continue;
      live.push_back(i);
      scores.push_back(oracle::additive(v1, w1, attn_states[i], w2, h));
    }
    const Vec a = oracle::softmax(scores);
    Vec ctx(h.size(), 0.0);
    for (std::size_t k = 0; k < live.size(); ++k)
      for (std::size_t j = 0; j < h.size(); ++j) ctx[j] += a[k] * attn_states[live[k]][j];
    h = oracle::gru(concat(emb[prev], ctx), h, mat(p, dec + ".gru.Wx"), mat(p, dec + ".gru.Wh"),
                    vec(p, dec + ".gru.b"));
    const Vec gen = oracle::matvec(w3, h);
    Vec mass(gen.size());
    for (std::size_t v = 0; v < gen.size(); ++v) mass[v] = std::exp(gen[v]);
    for (const auto& [name, src] : copies) {
      const std::string c = dec + ".copy." + name;
      for (std::size_t i = 0; i < src.tokens.size(); ++i) {
        if (!src.mask[i]) continue;
        mass[src.tokens[i]] += std::exp(oracle::additive(vec(p, c + ".v2"), mat(p, c + ".W4"),
                                                         src.hidden[i], mat(p, c + ".W5"), h));
      }
    }
    double z = 0.0;
    for (double m : mass) z += m;
    out.push_back(mass[target] / z);
    prev = target;
  }
  return out;
}

OracleSource oracle_source(const std::vector<int>& tokens, const std::vector<Vec>& hidden) {
  OracleSource s{tokens, hidden, {}};
  for (int t : tokens) s.mask.push_back(t != Vocabulary::kPad);
  return s;
}

double sum_values(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

void check_mixture(const MixtureDistribution& d) {
  CHECK(std::abs(sum_values(d.values()) - 1.0) < 1e-9);
  double mass = 0.0;
  for (double m : d.component_mass) {
    CHECK(m >= 0.0);
    mass += m;
  }
  CHECK(std::abs(mass - d.normalizer) <= 1e-9 * std::max(1.0, d.normalizer));
}

}  // namespace

TEST_CASE("vocabulary") {
  Vocabulary v = Vocabulary::build(std::vector<std::string>{"b", "a", "b"});
  CHECK(v.size() == Vocabulary::kReservedCount + 2);
  CHECK(v.token(Vocabulary::kPad) == Vocabulary::reserved_tokens()[0]);
  for (int i = 0; i < static_cast<int>(v.size()); ++i) CHECK(v.index(v.token(i)) == i);
  CHECK(v.index("zzz") == Vocabulary::kUnk);
  CHECK(v.index("a") < v.index("b"));
  CHECK(Vocabulary::build(std::vector<std::string>{"a", "b"}).hash() == v.hash());
  CHECK(Vocabulary::build(std::vector<std::string>{"a", "c"}).hash() != v.hash());
}

TEST_CASE("encode_context") {
  const ModelConfig c = small_config();
  SUBCASE("all-PAD input with zero params gives zero states") {
    ParamStore p;
    init_params(p, c, 1);
    for (auto& e : p.entries()) e.value = Tensor(e.value.shape());
    Tape tape(false);
    BoundModel m(tape, p, c, Phase::training);
    auto enc = encode_context(m, m.prior, std::vector<int>(8, 0));
    for (const Var& h : enc.hidden)
      for (double v : h.value().data()) CHECK(v == 0.0);
  }
  SUBCASE("N=8 gives 16 states") {
    ParamStore p;
    ModelConfig c8 = c;
    c8.utterance_len = 8;
    init_params(p, c8, 1);
    Tape tape(false);
    BoundModel m(tape, p, c8, Phase::training);
    auto toks = context_tokens(std::vector<int>{6, 7}, std::vector<int>{8, 9, 10}, 8);
    CHECK(toks.size() == 16);
    CHECK(encode_context(m, m.prior, toks).size() == 16);
  }
  SUBCASE("matches the scalar-loop oracle, seed 13") {
    const ParamStore p = random_params(c, 13);
    std::mt19937_64 rng(13);
    std::vector<int> toks(8);
    for (int& t : toks) t = std::uniform_int_distribution<int>(0, 11)(rng);
    toks[2] = Vocabulary::kPad;
    Tape tape(false);
    BoundModel m(tape, p, c, Phase::training);
    auto enc = encode_context(m, m.prior, toks);
    auto expect = oracle_encode(p, "prior", toks, c.hidden);
    for (std::size_t i = 0; i < toks.size(); ++i) {
      CHECK(enc.mask[i] == (toks[i] != Vocabulary::kPad));
      for (std::size_t k = 0; k < c.hidden; ++k)
        CHECK(std::abs(enc.hidden[i].value()[k] - expect[i][k]) < 1e-12);
    }
  }
  SUBCASE("out-of-range token") {
    ParamStore p;
    init_params(p, c, 1);
    Tape tape(false);
    BoundModel m(tape, p, c, Phase::training);
    CHECK_THROWS_AS(encode_context(m, m.prior, std::vector<int>{6, 12}), DimensionError);
  }
}

TEST_CASE("attend") {
  const ModelConfig c = small_config();
  const ParamStore p = random_params(c, 5);
  std::mt19937_64 rng(5);
  Tape tape(false);
  BoundModel m(tape, p, c, Phase::training);
  const Vec hy = oracle::random_vec(rng, 4);
  Var query = tape.constant(Tensor::vector(hy));

  SUBCASE("single position") {
    Var h0 = tape.constant(Tensor::vector(oracle::random_vec(rng, 4)));
    std::vector<Var> hs{h0};
    auto a = attend(m.prior.span.attn, attention_memory(m.prior.span.attn, hs, {true}), query);
    CHECK(a.weights.value()[0] == 1.0);
    for (std::size_t k = 0; k < 4; ++k) CHECK(a.context.value()[k] == h0.value()[k]);
  }
  SUBCASE("two identical positions") {
    Var h0 = tape.constant(Tensor::vector(oracle::random_vec(rng, 4)));
    std::vector<Var> hs{h0, h0};
    auto a = attend(m.prior.span.attn, attention_memory(m.prior.span.attn, hs, {true, true}), query);
    CHECK(std::abs(a.weights.value()[0] - 0.5) < 1e-15);
    CHECK(std::abs(a.weights.value()[1] - 0.5) < 1e-15);
  }
  SUBCASE("three positions match the scalar oracle, seed 5") {
    std::vector<Vec> states;
    std::vector<Var> hs;
    for (int i = 0; i < 3; ++i) {
      states.push_back(oracle::random_vec(rng, 4));
      hs.push_back(tape.constant(Tensor::vector(states.back())));
    }
    auto a = attend(m.prior.span.attn,
                    attention_memory(m.prior.span.attn, hs, {true, true, true}), query);
    Vec scores;
    for (const auto& s : states)
      scores.push_back(oracle::additive(vec(p, "prior.span.attn.v1"), mat(p, "prior.span.attn.W1"),
                                        s, mat(p, "prior.span.attn.W2"), hy));
    const Vec w = oracle::softmax(scores);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(a.weights.value()[i] - w[i]) < 1e-12);
    for (std::size_t k = 0; k < 4; ++k) {
      double ctx = 0.0;
      for (std::size_t i = 0; i < 3; ++i) ctx += w[i] * states[i][k];
      CHECK(std::abs(a.context.value()[k] - ctx) < 1e-12);
    }
  }
  SUBCASE("masked position gets zero weight") {
    std::vector<Var> hs{tape.constant(Tensor::vector(oracle::random_vec(rng, 4))),
                        tape.constant(Tensor::vector(oracle::random_vec(rng, 4)))};
    auto a = attend(m.prior.span.attn, attention_memory(m.prior.span.attn, hs, {true, false}), query);
    CHECK(a.weights.value()[1] == 0.0);
  }
}

TEST_CASE("decode_step, generation_scores and copy_scores") {
  ModelConfig c = small_config();
  c.embed = 3;
  c.hidden = 3;
  const ParamStore p = random_params(c, 21);
  std::mt19937_64 rng(21);
  Tape tape(false);
  BoundModel m(tape, p, c, Phase::training);
  const Vec e = oracle::random_vec(rng, 3), h = oracle::random_vec(rng, 3),
            ctx = oracle::random_vec(rng, 3);
  Var hv = decode_step(m.resp.gru, tape.constant(Tensor::vector(e)),
                       tape.constant(Tensor::vector(h)), tape.constant(Tensor::vector(ctx)));
  const Vec expect = oracle::gru(concat(e, ctx), h, mat(p, "resp.gru.Wx"), mat(p, "resp.gru.Wh"),
                                 vec(p, "resp.gru.b"));
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(hv.value()[k] - expect[k]) < 1e-12);

  Var again = decode_step(m.resp.gru, tape.constant(Tensor::vector(e)),
                          tape.constant(Tensor::vector(h)), tape.constant(Tensor::vector(ctx)));
  CHECK(again.value() == hv.value());

  Tensor zero3({3});
  Var z = decode_step(m.resp.gru, tape.constant(Tensor({3})), tape.constant(zero3),
                      tape.constant(zero3));
  // Nonzero biases: only the zero-parameter case is a fixed point.
  ParamStore zp = p;
  for (auto& en : zp.entries()) en.value = Tensor(en.value.shape());
  Tape ztape(false);
  BoundModel zm(ztape, zp, c, Phase::training);
  Var zz = decode_step(zm.resp.gru, ztape.constant(Tensor({3})), ztape.constant(zero3),
                       ztape.constant(zero3));
  for (double v : zz.value().data()) CHECK(v == 0.0);
  (void)z;

  SUBCASE("generation scores") {
    Var g = generation_scores(m.resp.w3, hv);
    const Vec oracle_g = oracle::matvec(mat(p, "resp.out.W3"), hv.value().values());
    for (std::size_t v = 0; v < c.vocab_size; ++v)
      CHECK(std::abs(g.value()[v] - oracle_g[v]) < 1e-12);
    Var gz = generation_scores(m.resp.w3, tape.constant(zero3));
    for (double v : gz.value().data()) CHECK(v == 0.0);
    Tensor selector({c.vocab_size, 3});
    for (std::size_t k = 0; k < 3; ++k) selector.at(k, k) = 1.0;
    Var gs = generation_scores(tape.constant(selector), hv);
    for (std::size_t k = 0; k < 3; ++k) CHECK(gs.value()[k] == hv.value()[k]);
  }
  SUBCASE("copy scores") {
    std::vector<Vec> states;
    EncodedSequence src;
    for (int i = 0; i < 4; ++i) {
      states.push_back(oracle::random_vec(rng, 3));
      src.tokens.push_back(6 + i);
      src.hidden.push_back(tape.constant(Tensor::vector(states.back())));
      src.mask.push_back(true);
    }
    Var psi = copy_scores(m.resp.copy[0], copy_memory(m.resp.copy[0], src), hv);
    REQUIRE(psi.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      const double o = oracle::additive(vec(p, "resp.copy.span.v2"), mat(p, "resp.copy.span.W4"),
                                        states[i], mat(p, "resp.copy.span.W5"),
                                        hv.value().values());
      CHECK(std::abs(psi.value()[i] - o) < 1e-12);
    }
    Var zpsi = copy_scores(zm.resp.copy[0], copy_memory(zm.resp.copy[0], [&] {
                             EncodedSequence s;
                             s.tokens = {6, 7};
                             s.hidden = {ztape.constant(zero3), ztape.constant(zero3)};
                             s.mask = {true, true};
                             return s;
                           }()),
                           ztape.constant(zero3));
    for (double v : zpsi.value().data()) CHECK(v == 0.0);
  }
}

TEST_CASE("project_copy_mass") {
  SUBCASE("soft example") {
    auto m = project_copy_mass(std::vector<std::vector<double>>{{0.7, 0.3}, {0.4, 0.6}},
                               std::vector<double>{0.0, 0.0});
    CHECK(std::abs(m[0] - 1.1) < 1e-15);
    CHECK(std::abs(m[1] - 0.9) < 1e-15);
  }
  SUBCASE("absent token gets zero") {
    auto m = project_copy_mass(std::vector<int>{2, 2, 3}, std::vector<double>{0.1, 0.2, 0.3}, 5);
    CHECK(m[0] == 0.0);
    CHECK(m[4] == 0.0);
    CHECK(std::abs(m[2] - (std::exp(0.1) + std::exp(0.2))) < 1e-15);
  }
  SUBCASE("one-hot distributions equal the deterministic path") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<int> toks(5);
      std::vector<std::vector<double>> dists;
      for (int& t : toks) {
        t = std::uniform_int_distribution<int>(0, 6)(rng);
        std::vector<double> d(7, 0.0);
        d[t] = 1.0;
        dists.push_back(d);
      }
      auto psi = oracle::random_vec(rng, 5, 3.0);
      std::vector<bool> mask{true, false, true, true, true};
      auto a = project_copy_mass(toks, psi, 7, mask);
      auto b = project_copy_mass(dists, psi, mask);
      for (std::size_t v = 0; v < 7; ++v) CHECK(std::abs(a[v] - b[v]) < 1e-12);
    }
  }
}

TEST_CASE("mix_distribution") {
  SUBCASE("uniform") {
    auto r = mix_distribution(std::vector<double>{0, 0, 0, 0}, {});
    for (double p : r.probs) CHECK(p == 0.25);
  }
  SUBCASE("shared normaliser example") {
    const double e = std::exp(1.0);
    auto mass = project_copy_mass(std::vector<int>{0}, std::vector<double>{1.0}, 2);
    auto r = mix_distribution(std::vector<double>{0, 0}, {mass});
    CHECK(std::abs(r.probs[0] - (1 + e) / (2 + e)) < 1e-15);
    CHECK(std::abs(r.probs[1] - 1 / (2 + e)) < 1e-15);
    CHECK(std::abs(r.component_mass[0] + r.component_mass[1] - r.normalizer) < 1e-9);
  }
  SUBCASE("degenerate") {
    CHECK_THROWS_AS(mix_distribution(std::vector<double>{-INFINITY, -INFINITY}, {}), DomainError);
  }
  SUBCASE("fused mix agrees with project + mix_distribution") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 30; ++trial) {
      Tape tape(false);
      const auto gen = oracle::random_vec(rng, 6, 4.0);
      EncodedSequence det;
      det.tokens = {1, 3, 3, 0};
      det.mask = {true, true, true, false};
      det.hidden.resize(4);
      EncodedSequence soft;
      soft.tokens = {0, 0};
      soft.mask = {true, true};
      soft.hidden.resize(2);
      std::vector<std::vector<double>> dists;
      for (int i = 0; i < 2; ++i) {
        dists.push_back(oracle::random_distribution(rng, 6));
        soft.distributions.push_back(tape.constant(Tensor::vector(dists.back())));
      }
      const auto psi1 = oracle::random_vec(rng, 4, 4.0), psi2 = oracle::random_vec(rng, 2, 4.0);
      std::vector<CopyTerm> terms{{tape.constant(Tensor::vector(psi1)), &det},
                                  {tape.constant(Tensor::vector(psi2)), &soft}};
      auto d = mix(tape.constant(Tensor::vector(gen)), terms);
      auto ref = mix_distribution(gen, {project_copy_mass(det.tokens, psi1, 6, det.mask),
                                        project_copy_mass(dists, psi2, soft.mask)});
      for (std::size_t v = 0; v < 6; ++v) CHECK(std::abs(d.values()[v] - ref.probs[v]) < 1e-12);
      REQUIRE(d.components() == 3);
      check_mixture(d);
      const double scale = std::exp(d.log_shift);
      for (std::size_t k = 0; k < 3; ++k)
        CHECK(std::abs(d.component_mass[k] * scale - ref.component_mass[k]) <
              1e-9 * ref.normalizer);
    }
  }
}

TEST_CASE("span distributions") {
  const ModelConfig c = small_config();
  const ParamStore p = random_params(c, 31);
  const std::vector<int> prev{6, 7}, user{8, 9, 10};
  const std::vector<int> gold_span{9, Vocabulary::kSpanDelim, Vocabulary::kEosSpan};

  SUBCASE("component counts and normalisation") {
    Tape tape(false);
    BoundModel m(tape, p, c, Phase::training);
    TurnState t0{0, prev, user, nullptr};
    auto run0 = prior_span_distributions(m, t0, SpanPolicy::teacher(gold_span));
    for (const auto& d : run0.span.steps) {
      CHECK(d.components() == 2);
      check_mixture(d);
    }
    EncodedSequence src = run0.span.as_source(false);
    TurnState t1{1, prev, user, &src};
    auto run1 = prior_span_distributions(m, t1, SpanPolicy::teacher(gold_span));
    for (const auto& d : run1.span.steps) {
      CHECK(d.components() == 3);
      check_mixture(d);
    }
    SpanDecodeConfig fixed;
    fixed.mode = SpanDecodeConfig::Mode::fixed_length;
    fixed.span_len = 3;
    auto free_run = prior_span_distributions(m, t1, SpanPolicy::free_running(fixed));
    CHECK(free_run.span.tokens.size() == 3);
    for (const auto& d : free_run.span.steps) check_mixture(d);

    auto mem = response_memory(m, run1.context, run1.span, false);
    for (const auto& d : response_distributions(m, mem, response_targets(user, 4))) {
      CHECK(d.components() == 2);
      check_mixture(d);
    }
  }

  SUBCASE("teacher-forced likelihood equals the chain-rule oracle") {
    Tape tape(false);
    BoundModel m(tape, p, c, Phase::training);
    const std::vector<int> two{8, Vocabulary::kEosSpan};
    auto run = prior_span_distributions(m, TurnState{0, prev, user, nullptr},
                                        SpanPolicy::teacher(two));
    const auto ctx = context_tokens(prev, user, c.utterance_len);
    const auto hx = oracle_encode(p, "prior", ctx, c.hidden);
    std::vector<bool> mask;
    for (int t : ctx) mask.push_back(t != Vocabulary::kPad);
    auto probs = oracle_decode(p, "prior.span", "prior.emb", hx, mask,
                               {{"ctx", oracle_source(ctx, hx)}}, hx.back(), two);
    const double model_joint = run.span.steps[0].values()[two[0]] *
                               run.span.steps[1].values()[two[1]];
    CHECK(std::abs(model_joint - probs[0] * probs[1]) < 1e-12);
  }

  SUBCASE("posterior matches the scalar oracle over 3N positions") {
    Tape tape(false);
    BoundModel m(tape, p, c, Phase::training);
    const std::vector<int> gold_resp{11, 6};
    auto run = posterior_span_distributions(m, TurnState{0, prev, user, nullptr}, gold_resp,
                                            SpanPolicy::teacher(gold_span));
    CHECK(run.context.size() == 3 * c.utterance_len);
    auto ctx = context_tokens(prev, user, c.utterance_len);
    auto r = pad_to(gold_resp, c.utterance_len);
    ctx.insert(ctx.end(), r.begin(), r.end());
    const auto hx = oracle_encode(p, "post", ctx, c.hidden);
    std::vector<bool> mask;
    for (int t : ctx) mask.push_back(t != Vocabulary::kPad);
    auto probs = oracle_decode(p, "post.span", "post.emb", hx, mask,
                               {{"ctx", oracle_source(ctx, hx)}}, hx.back(), gold_span);
    for (std::size_t j = 0; j < gold_span.size(); ++j)
      CHECK(std::abs(run.span.steps[j].values()[gold_span[j]] - probs[j]) < 1e-12);
  }

  SUBCASE("response decoder matches the scalar oracle") {
    Tape tape(false);
    BoundModel m(tape, p, c, Phase::training);
    auto run = prior_span_distributions(m, TurnState{0, prev, user, nullptr},
                                        SpanPolicy::teacher(gold_span));
    auto mem = response_memory(m, run.context, run.span, true);
    const auto targets = response_targets(std::vector<int>{9, 11}, c.utterance_len);
    auto dists = response_distributions(m, mem, targets);

    const auto ctx = context_tokens(prev, user, c.utterance_len);
    auto states = oracle_encode(p, "prior", ctx, c.hidden);
    std::vector<bool> mask;
    for (int t : ctx) mask.push_back(t != Vocabulary::kPad);
    std::vector<Vec> span_states;
    for (const Var& h : run.span.hidden) span_states.push_back(h.value().values());
    states.insert(states.end(), span_states.begin(), span_states.end());
    mask.resize(states.size(), true);
    auto probs = oracle_decode(p, "resp", "prior.emb", states, mask,
                               {{"span", oracle_source(gold_span, span_states)}},
                               span_states.back(), targets);
    for (std::size_t j = 0; j < targets.size(); ++j)
      CHECK(std::abs(dists[j].values()[targets[j]] - probs[j]) < 1e-12);
  }

  SUBCASE("posterior equals prior when tied and R_t is padding") {
    ParamStore tied = p;
    tie_posterior_to_prior(tied);
    Tape tape(false);
    BoundModel m(tape, tied, c, Phase::training);
    TurnState t0{0, prev, user, nullptr};
    auto a = prior_span_distributions(m, t0, SpanPolicy::teacher(gold_span));
    auto b = posterior_span_distributions(m, t0, std::vector<int>{}, SpanPolicy::teacher(gold_span));
    for (std::size_t j = 0; j < gold_span.size(); ++j)
      for (std::size_t v = 0; v < c.vocab_size; ++v)
        CHECK(std::abs(a.span.steps[j].values()[v] - b.span.steps[j].values()[v]) < 1e-9);
  }

  SUBCASE("posterior refuses to run at inference") {
    Tape tape(false);
    BoundModel m(tape, p, c, Phase::inference);
    CHECK_THROWS_AS(posterior_span_distributions(m, TurnState{0, prev, user, nullptr}, user,
                                                 SpanPolicy::teacher(gold_span)),
                    ContractError);
  }

  SUBCASE("one-hot span distributions equal the deterministic span") {
    Tape tape(false);
    BoundModel m(tape, p, c, Phase::training);
    auto run = prior_span_distributions(m, TurnState{0, prev, user, nullptr},
                                        SpanPolicy::teacher(gold_span));
    SpanTrace onehot = run.span;
    for (std::size_t j = 0; j < onehot.steps.size(); ++j) {
      Tensor t({c.vocab_size});
      t[static_cast<std::size_t>(onehot.tokens[j])] = 1.0;
      onehot.steps[j].probs = tape.constant(t);
    }
    const auto targets = response_targets(user, c.utterance_len);
    auto det = response_distributions(m, response_memory(m, run.context, run.span, true), targets);
    auto soft = response_distributions(m, response_memory(m, run.context, onehot, false), targets);
    for (std::size_t j = 0; j < targets.size(); ++j)
      for (std::size_t v = 0; v < c.vocab_size; ++v)
        CHECK(std::abs(det[j].values()[v] - soft[j].values()[v]) < 1e-12);
  }
}

TEST_CASE("teacher-forced log-likelihood gradients pass finite differences") {
  const ModelConfig c = small_config();
  const ParamStore p = random_params(c, 41, 0.3);
  const std::vector<int> prev{6, 7}, user{8, 9, 10};
  const std::vector<int> span{9, Vocabulary::kSpanDelim, Vocabulary::kEosSpan};
  const std::vector<int> resp{11, 9};
  LossFunction loss = [&](const ParamStore& ps, GradientMap* grads) {
    Tape tape(grads != nullptr);
    BoundModel m(tape, ps, c, Phase::training);
    TurnState t0{0, prev, user, nullptr};
    auto first = prior_span_distributions(m, t0, SpanPolicy::teacher(span));
    EncodedSequence src = first.span.as_source(false);
    TurnState t1{1, resp, user, &src};
    auto run = prior_span_distributions(m, t1, SpanPolicy::teacher(span));
    auto post = posterior_span_distributions(m, t1, resp, SpanPolicy::teacher(span));
    std::vector<Var> terms;
    for (std::size_t j = 0; j < span.size(); ++j) {
      terms.push_back(ops::neg_log(run.span.steps[j].probs, span[j]));
      terms.push_back(ops::neg_log(post.span.steps[j].probs, span[j]));
    }
    const auto targets = response_targets(resp, c.utterance_len);
    auto dists = response_distributions(m, response_memory(m, run.context, run.span, false),
                                        targets);
    for (std::size_t j = 0; j < targets.size(); ++j)
      terms.push_back(ops::neg_log(dists[j].probs, targets[j]));
    const auto rtargets = reconstruction_targets(prev, user, resp, c.utterance_len);
    auto rd = reconstruction_distributions(m, reconstruction_memory(m, post.span), rtargets);
    for (std::size_t j = 0; j < rtargets.size(); ++j)
      terms.push_back(ops::neg_log(rd[j].probs, rtargets[j]));
    Var total = ops::add_n(terms);
    if (grads) *grads = backward(tape, total, ps);
    return total.scalar();
  };
  auto r = finite_difference_check(loss, p, 1e-5, 150, 7);
  CAPTURE(r.worst_param);
  CAPTURE(r.worst_analytic);
  CAPTURE(r.worst_numeric);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("select_span_token") {
  Tensor probs = Tensor::vector({0.05, 0.05, 0.05, 0.05, 0.3, 0.05, 0.2, 0.2, 0.05});
  SpanDecodeConfig eos;
  CHECK(select_span_token(probs, std::vector<int>{}, eos) == 4);
  // Ties go to the lower index.
  CHECK(select_span_token(probs, std::vector<int>{4}, eos) == 6);
  CHECK(select_span_token(probs, std::vector<int>{4, 6}, eos) == 7);
  SpanDecodeConfig fixed;
  fixed.mode = SpanDecodeConfig::Mode::fixed_length;
  CHECK(select_span_token(probs, std::vector<int>{}, fixed) == 6);
}

TEST_CASE("targets") {
  CHECK(response_targets(std::vector<int>{7, 8, 9}, 2) ==
        std::vector<int>{7, 8, Vocabulary::kEosUtterance});
  CHECK(reconstruction_targets(std::vector<int>{7}, std::vector<int>{8}, std::vector<int>{9}, 4) ==
        std::vector<int>{7, 3, 8, 3, 9});
}
