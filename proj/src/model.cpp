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

#include "copyflow/model.hpp"

#include <algorithm>
#include <random>

#include "copyflow/errors.hpp"
#include "copyflow/ops.hpp"
#include "copyflow/vocab.hpp"

namespace copyflow {
namespace {

constexpr double kInitRange = 0.08;

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
  bool bias = false;
};

void add_gru(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t input,
             std::size_t hidden) {
  specs.push_back({prefix + ".Wx", {3 * hidden, input}});
  specs.push_back({prefix + ".Wh", {3 * hidden, hidden}});
  specs.push_back({prefix + ".b", {3 * hidden}, true});
}

void add_decoder(std::vector<ParamSpec>& specs, const std::string& prefix,
                 const std::vector<std::string>& copies, const ModelConfig& c) {
  const std::size_t h = c.hidden;
  specs.push_back({prefix + ".attn.W1", {h, h}});
  specs.push_back({prefix + ".attn.W2", {h, h}});
  specs.push_back({prefix + ".attn.v1", {h}});
  add_gru(specs, prefix + ".gru", c.embed + h, h);
  specs.push_back({prefix + ".out.W3", {c.vocab_size, h}});
  for (const auto& src : copies) {
    specs.push_back({prefix + ".copy." + src + ".W4", {h, h}});
    specs.push_back({prefix + ".copy." + src + ".W5", {h, h}});
    specs.push_back({prefix + ".copy." + src + ".v2", {h}});
  }
}

void add_network(std::vector<ParamSpec>& specs, const std::string& prefix, const ModelConfig& c) {
  specs.push_back({prefix + ".emb", {c.vocab_size, c.embed}});
  add_gru(specs, prefix + ".enc", c.embed, c.hidden);
  add_decoder(specs, prefix + ".span", {"ctx", "prev"}, c);
}

std::vector<ParamSpec> parameter_layout(const ModelConfig& c) {
  std::vector<ParamSpec> specs;
  add_network(specs, "prior", c);
  add_network(specs, "post", c);
  add_decoder(specs, "resp", {"span"}, c);
  add_decoder(specs, "post.recon", {"span"}, c);
  return specs;
}

GruVars bind_gru(Tape& t, const ParamStore& p, const std::string& prefix) {
  return {t.param(p, prefix + ".Wx"), t.param(p, prefix + ".Wh"), t.param(p, prefix + ".b")};
}

DecoderVars bind_decoder(Tape& t, const ParamStore& p, const std::string& prefix, Var emb,
                         const std::vector<std::string>& copies) {
  DecoderVars d;
  d.emb = emb;
  d.attn = {t.param(p, prefix + ".attn.W1"), t.param(p, prefix + ".attn.W2"),
            t.param(p, prefix + ".attn.v1")};
  d.gru = bind_gru(t, p, prefix + ".gru");
  d.w3 = t.param(p, prefix + ".out.W3");
  for (const auto& src : copies) {
    const std::string c = prefix + ".copy." + src;
    d.copy.push_back({t.param(p, c + ".W4"), t.param(p, c + ".W5"), t.param(p, c + ".v2")});
  }
  return d;
}

NetworkVars bind_network(Tape& t, const ParamStore& p, const std::string& prefix) {
  NetworkVars n;
  n.emb = t.param(p, prefix + ".emb");
  n.enc = bind_gru(t, p, prefix + ".enc");
  n.span = bind_decoder(t, p, prefix + ".span", n.emb, {"ctx", "prev"});
  return n;
}

SpanRun run_span(const NetworkVars& net, EncodedSequence context,
                 const EncodedSequence* prev_span, const SpanPolicy& policy) {
  SpanRun run;
  run.context = std::move(context);
  DecoderMemory memory;
  memory.attention = attention_memory(net.span.attn, run.context.hidden, run.context.mask);
  memory.copies.push_back(copy_memory(net.span.copy[0], run.context));
  if (prev_span != nullptr && prev_span->size() > 0) {
    memory.copies.push_back(copy_memory(net.span.copy[1], *prev_span));
  }

  const std::size_t limit =
      policy.teacher_forced ? policy.teacher_tokens.size() : policy.decode.max_steps();
  if (!policy.teacher_forced && policy.decode.mode == SpanDecodeConfig::Mode::fixed_length &&
      policy.decode.span_len == 0) {
    throw ConfigError("fixed-length span decoding needs span_len >= 1");
  }
  Var hidden = run.context.hidden.back();
  int prev = Vocabulary::kGo;
  for (std::size_t j = 0; j < limit; ++j) {
    StepOutput step = decoder_step(net.span, memory, prev, hidden);
    const int token = policy.teacher_forced
                          ? policy.teacher_tokens[j]
                          : select_span_token(step.dist.values(), run.span.tokens, policy.decode);
    run.span.tokens.push_back(token);
    run.span.hidden.push_back(step.hidden);
    run.span.steps.push_back(std::move(step.dist));
    hidden = step.hidden;
    prev = token;
    if (!policy.teacher_forced && policy.decode.mode == SpanDecodeConfig::Mode::eos_terminated &&
        token == Vocabulary::kEosSpan) {
      break;
    }
  }
  return run;
}

std::vector<MixtureDistribution> teacher_forced(const DecoderVars& dec, const ResponseMemory& memory,
                                                std::span<const int> targets) {
  std::vector<MixtureDistribution> out;
  out.reserve(targets.size());
  Var hidden = memory.initial_hidden;
  int prev = Vocabulary::kGo;
  for (int target : targets) {
    StepOutput step = decoder_step(dec, memory.memory, prev, hidden);
    out.push_back(std::move(step.dist));
    hidden = step.hidden;
    prev = target;
  }
  return out;
}

}  // namespace

void init_params(ParamStore& params, const ModelConfig& config, std::uint64_t seed) {
  if (config.vocab_size == 0 || config.hidden == 0 || config.embed == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-kInitRange, kInitRange);
  for (auto& spec : parameter_layout(config)) {
    Tensor value(spec.shape);
    if (!spec.bias)
      for (double& v : value.data()) v = dist(rng);
    params.add(std::move(spec.name), std::move(value));
  }
}

void tie_posterior_to_prior(ParamStore& params) {
  for (auto& e : params.entries()) {
    if (e.name.rfind("post.", 0) != 0 || e.name.rfind("post.recon.", 0) == 0) continue;
    const std::string twin = "prior." + e.name.substr(5);
    e.value = params.get(twin);
  }
}

BoundModel::BoundModel(Tape& t, const ParamStore& params, const ModelConfig& c, Phase ph)
    : tape(&t), config(c), phase(ph) {
  prior = bind_network(t, params, "prior");
  post = bind_network(t, params, "post");
  resp = bind_decoder(t, params, "resp", prior.emb, {"span"});
  recon = bind_decoder(t, params, "post.recon", post.emb, {"span"});
  zero_hidden = t.constant(Tensor({c.hidden}));
}

std::vector<int> pad_to(std::span<const int> tokens, std::size_t n) {
  std::vector<int> out(tokens.begin(), tokens.begin() + std::min(n, tokens.size()));
  out.resize(n, Vocabulary::kPad);
  return out;
}

std::vector<int> context_tokens(std::span<const int> prev_response, std::span<const int> user,
                                std::size_t n) {
  std::vector<int> out = pad_to(prev_response, n);
  const std::vector<int> u = pad_to(user, n);
  out.insert(out.end(), u.begin(), u.end());
  return out;
}

EncodedSequence encode_context(const BoundModel& model, const NetworkVars& net,
                               std::span<const int> tokens) {
  if (tokens.empty()) throw ContractError("encode_context: empty input");
  EncodedSequence out;
  out.tokens.assign(tokens.begin(), tokens.end());
  out.hidden.reserve(tokens.size());
  out.mask.reserve(tokens.size());
  const std::size_t vocab = model.config.vocab_size;
  Var h = model.zero_hidden;
  for (int tok : tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= vocab) {
      throw DimensionError("token index " + std::to_string(tok) + " outside vocabulary of size " +
                           std::to_string(vocab));
    }
    if (tok == Vocabulary::kPad) {
      out.hidden.push_back(h);
      out.mask.push_back(false);
      continue;
    }
    h = ops::gru_cell(ops::row(net.emb, static_cast<std::size_t>(tok)), h, net.enc.wx, net.enc.wh,
                      net.enc.b);
    out.hidden.push_back(h);
    out.mask.push_back(true);
  }
  return out;
}

AttentionMemory attention_memory(const AttentionVars& attn, std::span<const Var> hidden,
                                 std::vector<bool> mask) {
  if (hidden.empty()) throw ContractError("attention over an empty sequence");
  AttentionMemory m;
  m.states = ops::stack(hidden);
  m.keys = ops::matmul_nt(m.states, attn.w1);
  m.mask = std::move(mask);
  return m;
}

Attention attend(const AttentionVars& attn, const AttentionMemory& memory, Var decoder_hidden) {
  Var query = ops::matvec(attn.w2, decoder_hidden);
  Var scores = ops::additive_scores(memory.keys, query, attn.v1);
  Attention a;
  a.weights = ops::softmax(scores, memory.mask);
  a.context = ops::weighted_rows(a.weights, memory.states);
  return a;
}

Var decode_step(const GruVars& gru, Var prev_token_embedding, Var prev_hidden, Var context) {
  return ops::gru_cell(ops::concat(prev_token_embedding, context), prev_hidden, gru.wx, gru.wh,
                       gru.b);
}

Var generation_scores(Var w3, Var decoder_hidden) { return ops::matvec(w3, decoder_hidden); }

CopyMemory copy_memory(const CopyVars& copy, EncodedSequence source) {
  if (source.size() == 0) throw ContractError("copy from an empty source");
  CopyMemory m;
  m.keys = ops::matmul_nt(ops::stack(source.hidden), copy.w4);
  m.source = std::move(source);
  return m;
}

Var copy_scores(const CopyVars& copy, const CopyMemory& memory, Var decoder_hidden) {
  return ops::additive_scores(memory.keys, ops::matvec(copy.w5, decoder_hidden), copy.v2);
}

StepOutput decoder_step(const DecoderVars& dec, const DecoderMemory& memory, int prev_token,
                        Var prev_hidden) {
  if (memory.copies.size() > dec.copy.size()) {
    throw ContractError("decoder has fewer copy parameter sets than copy sources");
  }
  StepOutput out;
  out.attention = attend(dec.attn, memory.attention, prev_hidden);
  Var emb = ops::row(dec.emb, static_cast<std::size_t>(prev_token));
  out.hidden = decode_step(dec.gru, emb, prev_hidden, out.attention.context);
  Var gen = generation_scores(dec.w3, out.hidden);
  std::vector<CopyTerm> terms;
  terms.reserve(memory.copies.size());
  for (std::size_t k = 0; k < memory.copies.size(); ++k) {
    out.psi.push_back(copy_scores(dec.copy[k], memory.copies[k], out.hidden));
    terms.push_back({out.psi.back(), &memory.copies[k].source});
  }
  out.dist = mix(gen, terms);
  return out;
}

EncodedSequence SpanTrace::as_source(bool deterministic) const {
  EncodedSequence s;
  s.tokens = tokens;
  s.hidden = hidden;
  s.mask.assign(tokens.size(), true);
  if (!deterministic) {
    for (const auto& step : steps) s.distributions.push_back(step.probs);
  }
  return s;
}

SpanPolicy SpanPolicy::teacher(std::vector<int> tokens) {
  SpanPolicy p;
  p.teacher_forced = true;
  p.teacher_tokens = std::move(tokens);
  return p;
}

SpanPolicy SpanPolicy::free_running(SpanDecodeConfig config) {
  SpanPolicy p;
  p.decode = config;
  return p;
}

int select_span_token(const Tensor& probs, std::span<const int> emitted,
                      const SpanDecodeConfig& config) {
  const bool skip_reserved = config.mode == SpanDecodeConfig::Mode::fixed_length;
  int best = -1;
  for (std::size_t v = 0; v < probs.size(); ++v) {
    const int tok = static_cast<int>(v);
    if (tok == Vocabulary::kPad || tok == Vocabulary::kGo) continue;
    if (skip_reserved && tok < Vocabulary::kReservedCount) continue;
    if (config.no_repeat && std::find(emitted.begin(), emitted.end(), tok) != emitted.end()) {
      continue;
    }
    if (best < 0 || probs[v] > probs[static_cast<std::size_t>(best)]) best = tok;
  }
  if (best < 0) throw ConfigError("no admissible span token left");
  return best;
}

SpanRun prior_span_distributions(const BoundModel& model, const TurnState& turn,
                                 const SpanPolicy& policy) {
  const auto tokens = context_tokens(turn.prev_response, turn.user, model.config.utterance_len);
  return run_span(model.prior, encode_context(model, model.prior, tokens), turn.prev_span,
                  policy);
}

SpanRun posterior_span_distributions(const BoundModel& model, const TurnState& turn,
                                     std::span<const int> gold_response,
                                     const SpanPolicy& policy) {
  if (model.phase != Phase::training) {
    throw ContractError("the posterior network only runs during training");
  }
  const std::size_t n = model.config.utterance_len;
  auto tokens = context_tokens(turn.prev_response, turn.user, n);
  const auto r = pad_to(gold_response, n);
  tokens.insert(tokens.end(), r.begin(), r.end());
  return run_span(model.post, encode_context(model, model.post, tokens), turn.prev_span,
                  policy);
}

ResponseMemory response_memory(const BoundModel& model, const EncodedSequence& context,
                               const SpanTrace& span, bool deterministic_span) {
  if (span.hidden.empty()) throw ContractError("response decoding needs a non-empty span");
  std::vector<Var> states = context.hidden;
  states.insert(states.end(), span.hidden.begin(), span.hidden.end());
  std::vector<bool> mask = context.mask;
  mask.resize(states.size(), true);
  ResponseMemory m;
  m.memory.attention = attention_memory(model.resp.attn, states, std::move(mask));
  m.memory.copies.push_back(copy_memory(model.resp.copy[0], span.as_source(deterministic_span)));
  m.initial_hidden = span.hidden.back();
  return m;
}

std::vector<MixtureDistribution> response_distributions(const BoundModel& model,
                                                        const ResponseMemory& memory,
                                                        std::span<const int> targets) {
  return teacher_forced(model.resp, memory, targets);
}

ResponseMemory reconstruction_memory(const BoundModel& model, const SpanTrace& posterior_span) {
  if (posterior_span.hidden.empty()) throw ContractError("reconstruction needs a non-empty span");
  ResponseMemory m;
  m.memory.attention = attention_memory(model.recon.attn, posterior_span.hidden,
                                        std::vector<bool>(posterior_span.hidden.size(), true));
  m.memory.copies.push_back(copy_memory(model.recon.copy[0], posterior_span.as_source(false)));
  m.initial_hidden = posterior_span.hidden.back();
  return m;
}

std::vector<MixtureDistribution> reconstruction_distributions(const BoundModel& model,
                                                              const ResponseMemory& memory,
                                                              std::span<const int> targets) {
  return teacher_forced(model.recon, memory, targets);
}

std::vector<int> response_targets(std::span<const int> response, std::size_t n) {
  std::vector<int> out;
  for (int tok : response) {
    if (out.size() == n) break;
    if (tok != Vocabulary::kPad) out.push_back(tok);
  }
  out.push_back(Vocabulary::kEosUtterance);
  return out;
}

std::vector<int> reconstruction_targets(std::span<const int> prev_response,
                                        std::span<const int> user,
                                        std::span<const int> response, std::size_t n) {
  std::vector<int> out;
  auto append = [&](std::span<const int> part) {
    std::size_t taken = 0;
    for (int tok : part) {
      if (taken == n) break;
      ++taken;
      if (tok != Vocabulary::kPad) out.push_back(tok);
    }
  };
  append(prev_response);
  out.push_back(Vocabulary::kEosUtterance);
  append(user);
  out.push_back(Vocabulary::kEosUtterance);
  append(response);
  return out;
}

}  // namespace copyflow
