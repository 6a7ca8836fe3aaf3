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

#include "copyflow/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include "copyflow/errors.hpp"

namespace copyflow {
namespace {

bool ranks_before(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

bool wins_over(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.finish_step != b.finish_step) return a.finish_step < b.finish_step;
  return a.tokens < b.tokens;
}

}  // namespace

BeamResult beam_search(const NextDistribution& next, std::size_t beam_size, std::size_t max_len,
                       int eos) {
  if (beam_size == 0) throw ConfigError("beam size must be at least 1");
  std::vector<BeamHypothesis> live{BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;
  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<BeamHypothesis> candidates;
    for (const auto& h : live) {
      const std::vector<double> probs = next(h.tokens);
      for (std::size_t v = 0; v < probs.size(); ++v) {
        if (!(probs[v] > 0.0)) continue;
        BeamHypothesis c;
        c.tokens = h.tokens;
        c.tokens.push_back(static_cast<int>(v));
        c.log_prob = h.log_prob + std::log(probs[v]);
        candidates.push_back(std::move(c));
      }
    }
    std::sort(candidates.begin(), candidates.end(), ranks_before);
    live.clear();
    for (auto& c : candidates) {
      if (live.size() == beam_size) break;
      if (c.tokens.back() == eos) {
        c.finished = true;
        c.finish_step = step;
        finished.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
    if (!finished.empty()) {
      const auto best = std::min_element(finished.begin(), finished.end(), wins_over);
      if (live.empty() || best->log_prob >= live.front().log_prob) break;
    }
  }
  BeamResult result;
  if (!finished.empty()) {
    result.best = *std::min_element(finished.begin(), finished.end(), wins_over);
    return result;
  }
  result.truncated = true;
  if (!live.empty()) result.best = live.front();
  return result;
}

BeamResult greedy_decode(const NextDistribution& next, std::size_t max_len, int eos) {
  BeamResult result;
  BeamHypothesis& h = result.best;
  for (std::size_t step = 0; step < max_len; ++step) {
    const std::vector<double> probs = next(h.tokens);
    if (probs.empty()) break;
    std::size_t best = 0;
    for (std::size_t v = 1; v < probs.size(); ++v)
      if (probs[v] > probs[best]) best = v;
    h.tokens.push_back(static_cast<int>(best));
    h.log_prob += std::log(probs[best]);
    if (static_cast<int>(best) == eos) {
      h.finished = true;
      h.finish_step = step;
      return result;
    }
  }
  result.truncated = true;
  return result;
}

SpanDecode decode_span(const BoundModel& model, const TurnState& turn,
                       const SpanDecodeConfig& config) {
  if (config.span_len == 0) throw ConfigError("span length must be at least 1");
  if (config.mode == SpanDecodeConfig::Mode::fixed_length && config.no_repeat &&
      config.span_len > model.config.vocab_size - Vocabulary::kReservedCount) {
    throw ConfigError("fixed-length span of " + std::to_string(config.span_len) +
                      " distinct tokens exceeds the " +
                      std::to_string(model.config.vocab_size - Vocabulary::kReservedCount) +
                      " non-reserved vocabulary entries");
  }
  SpanRun run = prior_span_distributions(model, turn, SpanPolicy::free_running(config));
  SpanDecode out;
  out.tokens = run.span.tokens;
  out.steps = run.span.steps;
  out.context = std::move(run.context);
  out.trace = std::move(run.span);
  return out;
}

ResponseStepper::ResponseStepper(const BoundModel& model, ResponseMemory memory)
    : model_(&model), memory_(std::move(memory)) {}

std::vector<double> ResponseStepper::operator()(std::span<const int> prefix) {
  std::vector<int> key(prefix.begin(), prefix.end());
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    Var hidden = memory_.initial_hidden;
    int prev = Vocabulary::kGo;
    if (!prefix.empty()) {
      (*this)(prefix.first(prefix.size() - 1));
      hidden = cache_.at(std::vector<int>(prefix.begin(), prefix.end() - 1)).hidden;
      prev = prefix.back();
    }
    StepOutput s = decoder_step(model_->resp, memory_.memory, prev, hidden);
    it = cache_.emplace(std::move(key), Node{s.hidden, std::move(s.dist)}).first;
  }
  const auto values = it->second.dist.values().data();
  return {values.begin(), values.end()};
}

const MixtureDistribution& ResponseStepper::step(std::span<const int> prefix) const {
  return cache_.at(std::vector<int>(prefix.begin(), prefix.end())).dist;
}

DialogueRunner::DialogueRunner(const ParamStore& params, const ModelConfig& config,
                               const Vocabulary& vocab, const KnowledgeBase* kb,
                               DecodeOptions options)
    : params_(&params),
      config_(config),
      vocab_(&vocab),
      kb_(kb),
      options_(options),
      tape_(std::make_unique<Tape>(false)),
      model_(std::make_unique<BoundModel>(*tape_, params, config, Phase::inference)) {
  if (vocab.size() != config.vocab_size) {
    throw DataError("vocabulary size " + std::to_string(vocab.size()) +
                    " does not match the model's " + std::to_string(config.vocab_size));
  }
}

TurnOutput DialogueRunner::step(std::span<const std::string> prev_response,
                                std::span<const std::string> user) {
  TurnState state;
  state.turn_index = turn_;
  state.prev_response = vocab_->encode(prev_response);
  state.user = vocab_->encode(user);
  state.prev_span = prev_span_ ? &*prev_span_ : nullptr;

  SpanDecode span = decode_span(*model_, state, options_.span);
  TurnOutput out;
  out.span = vocab_->decode(span.tokens);
  for (const auto& s : span.steps) out.span_components.push_back(s.component_mass);

  const Entity* entity = nullptr;
  if (kb_ != nullptr) {
    out.state = parse_span(out.span, kb_->schema, options_.intersect_slot_values);
    const auto matches = kb_search(*kb_, out.state.informable);
    out.kb_matches = matches.size();
    if (!matches.empty()) {
      out.entity_id = matches.front().id;
      entity = kb_->find(out.entity_id);
    }
  }

  const bool deterministic = options_.span.mode == SpanDecodeConfig::Mode::eos_terminated;
  ResponseStepper stepper(*model_, response_memory(*model_, span.context, span.trace, deterministic));
  const std::size_t max_len =
      options_.max_response_len ? options_.max_response_len : config_.utterance_len + 1;
  const BeamResult beam = beam_search(std::ref(stepper), options_.beam_size, max_len,
                                      Vocabulary::kEosUtterance);
  std::vector<int> tokens = beam.best.tokens;
  if (!tokens.empty() && tokens.back() == Vocabulary::kEosUtterance) tokens.pop_back();
  out.truncated = beam.truncated;
  out.response_log_prob = beam.best.log_prob;
  out.response_delex = vocab_->decode(tokens);
  out.response = entity ? lexicalize(out.response_delex, *entity, kb_->schema) : out.response_delex;

  prev_span_ = span.trace.as_source(deterministic);
  ++turn_;
  return out;
}

std::vector<TurnOutput> run_dialogue(const ParamStore& params, const ModelConfig& config,
                                     const Vocabulary& vocab, const DialogueSession& session,
                                     const KnowledgeBase* kb, const DecodeOptions& options) {
  DialogueRunner runner(params, config, vocab, kb, options);
  std::vector<TurnOutput> out;
  std::vector<std::string> prev;
  for (const auto& turn : session.turns) {
    out.push_back(runner.step(prev, turn.user));
    prev = turn.resp_delex;
  }
  return out;
}

std::vector<std::vector<TurnOutput>> decode_corpus_serial(
    const ParamStore& params, const ModelConfig& config, const Vocabulary& vocab,
    const std::vector<DialogueSession>& sessions, const KnowledgeBase* kb,
    const DecodeOptions& options) {
  std::vector<std::vector<TurnOutput>> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) out.push_back(run_dialogue(params, config, vocab, s, kb, options));
  return out;
}

std::vector<std::vector<TurnOutput>> decode_corpus_parallel(
    const ParamStore& params, const ModelConfig& config, const Vocabulary& vocab,
    const std::vector<DialogueSession>& sessions, const KnowledgeBase* kb,
    const DecodeOptions& options) {
  std::vector<std::vector<TurnOutput>> out(sessions.size());
  std::vector<std::exception_ptr> errors(sessions.size());
  const auto count = static_cast<long>(sessions.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < count; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      out[k] = run_dialogue(params, config, vocab, sessions[k], kb, options);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace copyflow
