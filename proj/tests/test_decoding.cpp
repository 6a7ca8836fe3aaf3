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
#include <functional>
#include <map>
#include <random>
#include <set>

#include "copyflow/decoding.hpp"
#include "copyflow/errors.hpp"
#include "copyflow/training.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace copyflow;

namespace {

// Prefix-dependent random distributions: a seeded "model" with no state.
NextDistribution random_model(std::uint64_t seed, std::size_t vocab, double sharpness = 2.0) {
  return [seed, vocab, sharpness](std::span<const int> prefix) {
    std::uint64_t h = seed * 0x9E3779B97F4A7C15ULL + 17;
    for (int t : prefix) h = (h ^ static_cast<std::uint64_t>(t + 1)) * 0x100000001B3ULL;
    std::mt19937_64 rng(h);
    auto s = oracle::random_vec(rng, vocab, sharpness);
    return oracle::softmax(s);
  };
}

struct Best {
  std::vector<int> tokens;
  double score = -INFINITY;
  bool found = false;
};

// Exhaustive search over every sequence that ends in eos within max_len.
void enumerate(const NextDistribution& next, std::vector<int>& prefix, double score,
               std::size_t max_len, int eos, std::size_t vocab, Best& best) {
  if (prefix.size() == max_len) return;
  const auto p = next(prefix);
  for (std::size_t v = 0; v < vocab; ++v) {
    prefix.push_back(static_cast<int>(v));
    const double s = score + std::log(p[v]);
    if (static_cast<int>(v) == eos) {
      const bool better = !best.found || s > best.score ||
                          (s == best.score && (prefix.size() < best.tokens.size() ||
                                               (prefix.size() == best.tokens.size() &&
                                                prefix < best.tokens)));
      if (better) best = {prefix, s, true};
    } else {
      enumerate(next, prefix, s, max_len, eos, vocab, best);
    }
    prefix.pop_back();
  }
}

std::size_t ipow(std::size_t b, std::size_t e) {
  std::size_t r = 1;
  while (e--) r *= b;
  return r;
}

struct TinyWorld {
  SyntheticCorpus corpus;
  Vocabulary vocab;
  ModelConfig config;
  ParamStore params;
};

TinyWorld tiny_world(std::uint64_t seed) {
  GeneratorConfig g;
  g.slots = 2;
  g.values_per_slot = 4;
  g.entities = 8;
  g.sessions = 10;
  TinyWorld w;
  w.corpus = generate_synthetic_corpus(g, seed);
  w.vocab = build_vocabulary(w.corpus.sessions, w.corpus.kb.schema);
  w.config.vocab_size = w.vocab.size();
  w.config.embed = 6;
  w.config.hidden = 6;
  w.config.utterance_len = 8;
  w.config.span_len = 5;
  init_params(w.params, w.config, seed);
  return w;
}

}  // namespace

TEST_CASE("beam search matches enumeration on |V|=3, max_len=2") {
  // Hand-specified step distributions; token 2 is eos.
  const std::map<std::vector<int>, std::vector<double>> table{
      {{}, {0.5, 0.3, 0.2}},
      {{0}, {0.1, 0.5, 0.4}},
      {{1}, {0.05, 0.05, 0.9}},
  };
  NextDistribution next = [&](std::span<const int> prefix) {
    return table.at(std::vector<int>(prefix.begin(), prefix.end()));
  };
  // Finished sequences: [2] 0.2, [0 2] 0.2, [1 2] 0.27. Enumeration agrees.
  Best best;
  std::vector<int> prefix;
  enumerate(next, prefix, 0.0, 2, 2, 3, best);
  CHECK(best.tokens == std::vector<int>{1, 2});
  for (std::size_t beam : {3u, 9u}) {
    auto r = beam_search(next, beam, 2, 2);
    CHECK_FALSE(r.truncated);
    CHECK(r.best.tokens == best.tokens);
    CHECK(r.best.log_prob == best.score);
  }
}

TEST_CASE("beam search tie-breaking") {
  // [2] and [0 2] both score log 0.5: the earlier finish wins.
  const std::map<std::vector<int>, std::vector<double>> table{
      {{}, {0.5, 0.0, 0.5}}, {{0}, {0.0, 0.0, 1.0}}};
  NextDistribution next = [&](std::span<const int> prefix) {
    return table.at(std::vector<int>(prefix.begin(), prefix.end()));
  };
  auto r = beam_search(next, 3, 2, 2);
  CHECK(r.best.tokens == std::vector<int>{2});
  CHECK(r.best.finish_step == 0);
}

TEST_CASE("nothing finishes: best live hypothesis with truncation flag") {
  NextDistribution next = [](std::span<const int>) { return std::vector<double>{0.6, 0.4, 0.0}; };
  auto r = beam_search(next, 2, 3, 2);
  CHECK(r.truncated);
  CHECK(r.best.tokens == std::vector<int>{0, 0, 0});
  auto g = greedy_decode(next, 3, 2);
  CHECK(g.truncated);
  CHECK(g.best.tokens == r.best.tokens);
}

TEST_CASE("beam search equals exhaustive search for a full-width beam") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t vocab = 2 + seed % 3;
    const std::size_t len = 1 + seed % 4;
    auto next = random_model(seed, vocab);
    Best best;
    std::vector<int> prefix;
    enumerate(next, prefix, 0.0, len, 0, vocab, best);
    auto r = beam_search(next, ipow(vocab, len), len, 0);
    CAPTURE(seed);
    REQUIRE(best.found);
    CHECK(r.best.tokens == best.tokens);
    CHECK(std::abs(r.best.log_prob - best.score) < 1e-12);
  }
}

TEST_CASE("beam 1 equals greedy; wider beams never score lower") {
  int compared = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto next = random_model(1000 + seed, 6, 3.0);
    auto g = greedy_decode(next, 8, 1);
    auto b1 = beam_search(next, 1, 8, 1);
    CAPTURE(seed);
    CHECK(b1.best.tokens == g.best.tokens);
    CHECK(b1.best.log_prob == g.best.log_prob);
    CHECK(b1.truncated == g.truncated);
    for (std::size_t k : {2u, 3u, 5u}) {
      auto bk = beam_search(next, k, 8, 1);
      if (!bk.truncated && !b1.truncated) {
        ++compared;
        CHECK(bk.best.log_prob >= b1.best.log_prob);
      }
    }
  }
  CHECK(compared > 100);
}

TEST_CASE("beam 1 equals greedy on the response decoder of random models") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TinyWorld w = tiny_world(seed + 1);
    Tape tape(false);
    BoundModel m(tape, w.params, w.config, Phase::inference);
    const auto& turn = w.corpus.sessions[0].turns[0];
    TurnState state{0, {}, w.vocab.encode(turn.user), nullptr};
    auto span = decode_span(m, state, SpanDecodeConfig{});
    ResponseStepper a(m, response_memory(m, span.context, span.trace, true));
    ResponseStepper b(m, response_memory(m, span.context, span.trace, true));
    auto g = greedy_decode(std::ref(a), 9, Vocabulary::kEosUtterance);
    auto bs = beam_search(std::ref(b), 1, 9, Vocabulary::kEosUtterance);
    CHECK(g.best.tokens == bs.best.tokens);
  }
}

TEST_CASE("decode_span") {
  TinyWorld w = tiny_world(4);
  REQUIRE(w.vocab.size() - Vocabulary::kReservedCount >= 8);
  Tape tape(false);
  BoundModel m(tape, w.params, w.config, Phase::inference);
  TurnState state{0, {}, w.vocab.encode(w.corpus.sessions[0].turns[0].user), nullptr};
  for (std::size_t len : {5u, 8u}) {
    SpanDecodeConfig c;
    c.mode = SpanDecodeConfig::Mode::fixed_length;
    c.span_len = len;
    auto s = decode_span(m, state, c);
    CHECK(s.tokens.size() == len);
    std::set<int> distinct(s.tokens.begin(), s.tokens.end());
    CHECK(distinct.size() == len);
    for (int t : s.tokens) CHECK_FALSE(w.vocab.is_reserved(t));
    for (const auto& d : s.steps) CHECK(d.components() == 2);
  }
  SpanDecodeConfig eos;
  eos.span_len = 3;
  auto s = decode_span(m, state, eos);
  CHECK(s.tokens.size() <= 6);
  SpanDecodeConfig too_long;
  too_long.mode = SpanDecodeConfig::Mode::fixed_length;
  too_long.span_len = w.vocab.size() - Vocabulary::kReservedCount + 1;
  CHECK_THROWS_AS(decode_span(m, state, too_long), ConfigError);
}

TEST_CASE("no-repeat takes the runner-up") {
  Tensor probs = Tensor::vector({0, 0, 0, 0, 0, 0, 0.97, 0.02, 0.01});
  SpanDecodeConfig c;
  c.mode = SpanDecodeConfig::Mode::fixed_length;
  const int first = select_span_token(probs, std::vector<int>{}, c);
  CHECK(first == 6);
  CHECK(select_span_token(probs, std::vector<int>{first}, c) == 7);
}

TEST_CASE("dialogue runner") {
  TinyWorld w = tiny_world(6);
  const auto& session = *std::max_element(
      w.corpus.sessions.begin(), w.corpus.sessions.end(),
      [](const auto& a, const auto& b) { return a.turns.size() < b.turns.size(); });
  REQUIRE(session.turns.size() >= 2);
  DecodeOptions opt;
  opt.span.span_len = 5;
  auto out = run_dialogue(w.params, w.config, w.vocab, session, &w.corpus.kb, opt);
  REQUIRE(out.size() == session.turns.size());
  for (const auto& comp : out[0].span_components) CHECK(comp.size() == 2);
  for (const auto& comp : out[1].span_components) CHECK(comp.size() == 3);
  for (const auto& t : out) {
    if (t.entity_id.empty()) continue;
    CHECK(t.kb_matches > 0);
    for (const auto& tok : t.response) CHECK(tok.find("_SLOT") == std::string::npos);
  }

  SUBCASE("same inputs give identical transcripts") {
    DialogueRunner a(w.params, w.config, w.vocab, &w.corpus.kb, opt);
    DialogueRunner b(w.params, w.config, w.vocab, &w.corpus.kb, opt);
    std::vector<std::string> prev;
    for (const auto& turn : session.turns) {
      auto x = a.step(prev, turn.user);
      auto y = b.step(prev, turn.user);
      CHECK(x.span == y.span);
      CHECK(x.response == y.response);
      CHECK(x.response_log_prob == y.response_log_prob);
      prev = x.response_delex;
    }
  }
  SUBCASE("serial and parallel corpus decoding agree") {
    auto s = decode_corpus_serial(w.params, w.config, w.vocab, w.corpus.sessions, &w.corpus.kb, opt);
    auto p = decode_corpus_parallel(w.params, w.config, w.vocab, w.corpus.sessions, &w.corpus.kb,
                                    opt);
    REQUIRE(s.size() == p.size());
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t t = 0; t < s[i].size(); ++t) {
        CHECK(s[i][t].span == p[i][t].span);
        CHECK(s[i][t].response == p[i][t].response);
      }
  }
  SUBCASE("vocabulary mismatch") {
    ModelConfig wrong = w.config;
    wrong.vocab_size += 1;
    CHECK_THROWS_AS(DialogueRunner(w.params, wrong, w.vocab, &w.corpus.kb, opt), DataError);
  }
}
