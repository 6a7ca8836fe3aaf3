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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "copyflow/mixture.hpp"
#include "copyflow/param_store.hpp"
#include "copyflow/tape.hpp"

namespace copyflow {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed = 50;
  std::size_t hidden = 50;
  /// N: previous response and user utterance are each padded/truncated to N.
  std::size_t utterance_len = 16;
  /// T_s: fixed span length (and half the cap of eos-terminated spans).
  std::size_t span_len = 8;
};

/// Prior and posterior networks share layout under the "prior."
/// and "post." prefixes. The response decoder ("resp.") belongs to the prior
/// side and is the only decoder that ever produces responses; the posterior's
/// reconstruction decoder lives under "post.recon.".
///
/// Weights and embeddings are drawn from uniform(-0.08, 0.08); biases are zero.
void init_params(ParamStore& params, const ModelConfig& config, std::uint64_t seed);

/// Copies every "prior.*" tensor onto its "post.*" twin.
void tie_posterior_to_prior(ParamStore& params);

struct SpanDecodeConfig {
  enum class Mode { eos_terminated, fixed_length };
  Mode mode = Mode::eos_terminated;
  std::size_t span_len = 8;
  bool no_repeat = true;

  std::size_t max_steps() const { return mode == Mode::fixed_length ? span_len : 2 * span_len; }
};

struct GruVars {
  Var wx, wh, b;
};
struct AttentionVars {
  Var w1, w2, v1;
};
struct CopyVars {
  Var w4, w5, v2;
};
struct DecoderVars {
  Var emb;
  AttentionVars attn;
  GruVars gru;
  Var w3;
  std::vector<CopyVars> copy;
};
struct NetworkVars {
  Var emb;
  GruVars enc;
  DecoderVars span;  // copy[0]: context, copy[1]: previous span
};

/// Whether the posterior network may run. Only the prior works at test time.
enum class Phase { training, inference };

/// Parameters bound as leaves on one tape.
struct BoundModel {
  BoundModel(Tape& tape, const ParamStore& params, const ModelConfig& config, Phase phase);

  Tape* tape;
  ModelConfig config;
  Phase phase;
  NetworkVars prior;
  NetworkVars post;
  DecoderVars resp;   // copy[0]: span
  DecoderVars recon;  // copy[0]: posterior span
  Var zero_hidden;
};

// ---------------------------------------------------------------------------
// Building blocks.

/// pad(prev_response, N) ++ pad(user, N). Longer inputs are truncated.
std::vector<int> context_tokens(std::span<const int> prev_response, std::span<const int> user,
                                std::size_t n);
std::vector<int> pad_to(std::span<const int> tokens, std::size_t n);

/// Single forward GRU over embedded tokens. A PAD position carries the
/// previous hidden state forward unchanged and is masked out.
/// Throws DimensionError on a token outside the vocabulary.
EncodedSequence encode_context(const BoundModel& model, const NetworkVars& net,
                               std::span<const int> tokens);

/// Cached attention keys: the stacked source states and W1 h^(x)_i.
struct AttentionMemory {
  Var states;
  Var keys;
  std::vector<bool> mask;
};
AttentionMemory attention_memory(const AttentionVars& attn, std::span<const Var> hidden,
                                 std::vector<bool> mask);

struct Attention {
  Var weights;
  Var context;
};
/// a_i = softmax_i(v1 . tanh(W1 h^(x)_i + W2 h^(y)_{j-1})), context = sum_i a_i h^(x)_i.
Attention attend(const AttentionVars& attn, const AttentionMemory& memory, Var decoder_hidden);

/// h^(y)_j = GRU([w_{y_{j-1}}; context], h^(y)_{j-1}).
Var decode_step(const GruVars& gru, Var prev_token_embedding, Var prev_hidden, Var context);

/// Unnormalised W3 h^(y)_j; exponentiation happens in `mix`.
Var generation_scores(Var w3, Var decoder_hidden);

/// Cached copy keys W4 h^(x)_i for one source.
struct CopyMemory {
  EncodedSequence source;
  Var keys;
};
CopyMemory copy_memory(const CopyVars& copy, EncodedSequence source);
/// psi_i = v2 . tanh(W4 h^(x)_i + W5 h^(y)_j). Masked positions are excluded
/// later by `mix`.
Var copy_scores(const CopyVars& copy, const CopyMemory& memory, Var decoder_hidden);

struct DecoderMemory {
  AttentionMemory attention;
  std::vector<CopyMemory> copies;
};

struct StepOutput {
  Var hidden;
  Attention attention;
  std::vector<Var> psi;
  MixtureDistribution dist;
};

/// One decoder step: attend with the previous hidden state, advance the GRU,
/// then mix generation with every copy flow under one normaliser.
StepOutput decoder_step(const DecoderVars& dec, const DecoderMemory& memory, int prev_token,
                        Var prev_hidden);

// ---------------------------------------------------------------------------
// Turn-level passes.

/// Inputs for one turn. `prev_span` is null on the first turn.
struct TurnState {
  std::size_t turn_index = 0;
  std::vector<int> prev_response;
  std::vector<int> user;
  const EncodedSequence* prev_span = nullptr;
};

struct SpanTrace {
  std::vector<int> tokens;  // emitted (or teacher) tokens, one per step
  std::vector<Var> hidden;  // decoder state that produced each token
  std::vector<MixtureDistribution> steps;

  /// Copy source built from this span: one-hot on `tokens` when
  /// `deterministic`, otherwise the per-step distributions.
  EncodedSequence as_source(bool deterministic) const;
};

/// Either follow `teacher_tokens` or max-sample under `decode`.
struct SpanPolicy {
  bool teacher_forced = false;
  std::vector<int> teacher_tokens;
  SpanDecodeConfig decode;

  static SpanPolicy teacher(std::vector<int> tokens);
  static SpanPolicy free_running(SpanDecodeConfig config);
};

/// Highest-probability admissible token: with no_repeat, tokens already in
/// `emitted` are skipped; PAD and GO are never chosen, and in fixed-length mode
/// no reserved token is.
/// Ties go to the lower index.
int select_span_token(const Tensor& probs, std::span<const int> emitted,
                      const SpanDecodeConfig& config);

struct SpanRun {
  EncodedSequence context;
  SpanTrace span;
};

/// Prior pass: encode R_{t-1} U_t (2N positions) and decode S_t with copy
/// flows from the context and, for t > 0, from S_{t-1}.
SpanRun prior_span_distributions(const BoundModel& model, const TurnState& turn,
                                 const SpanPolicy& policy);

/// Posterior pass: the encoder also consumes R_t (3N positions).
/// Throws ContractError in the inference phase.
SpanRun posterior_span_distributions(const BoundModel& model, const TurnState& turn,
                                     std::span<const int> gold_response,
                                     const SpanPolicy& policy);

/// Response decoder memory: attention over R_{t-1} U_t ++ S_t states, copy
/// from S_t, initial state = last span state.
struct ResponseMemory {
  DecoderMemory memory;
  Var initial_hidden;
};
ResponseMemory response_memory(const BoundModel& model, const EncodedSequence& context,
                               const SpanTrace& span, bool deterministic_span);

/// Teacher-forced response distributions, one per target token.
std::vector<MixtureDistribution> response_distributions(const BoundModel& model,
                                                        const ResponseMemory& memory,
                                                        std::span<const int> targets);

/// Auto-encoder path of the posterior: attends over and copies from the
/// posterior span only.
ResponseMemory reconstruction_memory(const BoundModel& model, const SpanTrace& posterior_span);
std::vector<MixtureDistribution> reconstruction_distributions(const BoundModel& model,
                                                              const ResponseMemory& memory,
                                                              std::span<const int> targets);

/// Target tokens of the response decoder: truncate(R_t, N) then EOS_UTTERANCE.
std::vector<int> response_targets(std::span<const int> response, std::size_t n);
/// Reconstruction target R_{t-1} </u> U_t </u> R_t, each part truncated to N.
std::vector<int> reconstruction_targets(std::span<const int> prev_response,
                                        std::span<const int> user,
                                        std::span<const int> response, std::size_t n);

}  // namespace copyflow
