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

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "copyflow/corpus.hpp"
#include "copyflow/model.hpp"
#include "copyflow/vocab.hpp"

namespace copyflow {

/// Next-token distribution after `prefix` (the tokens emitted so far).
using NextDistribution = std::function<std::vector<double>(std::span<const int> prefix)>;

struct BeamHypothesis {
  std::vector<int> tokens;
  double log_prob = 0.0;
  bool finished = false;
  std::size_t finish_step = 0;
};

struct BeamResult {
  BeamHypothesis best;
  /// No hypothesis reached `eos` within max_len; `best` is the best live one.
  bool truncated = false;
};

/// Beam search on raw summed log probabilities. At each step the candidates
/// are ranked by score (ties: lexicographic token order); finished candidates
/// leave the beam and the best `beam_size` unfinished ones are extended.
/// The search stops once no live hypothesis can beat the best finished one.
/// The winner is the finished hypothesis with the highest score, ties going to
/// the earlier finish, then lexicographic order.
BeamResult beam_search(const NextDistribution& next, std::size_t beam_size, std::size_t max_len,
                       int eos);

/// Stepwise argmax (ties to the lower index) until `eos` or max_len.
BeamResult greedy_decode(const NextDistribution& next, std::size_t max_len, int eos);

struct DecodeOptions {
  SpanDecodeConfig span;
  std::size_t beam_size = 5;
  /// 0 means utterance_len + 1.
  std::size_t max_response_len = 0;
  /// Read constraints from every span token that is a slot value.
  bool intersect_slot_values = false;
};

struct SpanDecode {
  std::vector<int> tokens;
  std::vector<MixtureDistribution> steps;
  EncodedSequence context;
  SpanTrace trace;
};

/// Free-running span decode with the prior network. Throws ConfigError when a
/// fixed-length no-repeat span cannot fit in the non-reserved vocabulary.
SpanDecode decode_span(const BoundModel& model, const TurnState& turn,
                       const SpanDecodeConfig& config);

/// Response decoder stepping for beam search: one decoder state per prefix,
/// computed lazily from the parent prefix.
class ResponseStepper {
 public:
  ResponseStepper(const BoundModel& model, ResponseMemory memory);
  std::vector<double> operator()(std::span<const int> prefix);
  /// Distribution recorded for `prefix` (after a prior call).
  const MixtureDistribution& step(std::span<const int> prefix) const;

 private:
  struct Node {
    Var hidden;
    MixtureDistribution dist;
  };
  const BoundModel* model_;
  ResponseMemory memory_;
  std::map<std::vector<int>, Node> cache_;
};

struct TurnOutput {
  std::vector<std::string> span;
  /// Per span step: [generation, context copy, previous span copy] masses
  /// relative to the step's own shift.
  std::vector<std::vector<double>> span_components;
  StateAnnotation state;
  std::size_t kb_matches = 0;
  std::string entity_id;  // empty without a match or without a KB
  std::vector<std::string> response_delex;
  std::vector<std::string> response;
  bool truncated = false;
  double response_log_prob = 0.0;
};

/// Runs the two-stage pipeline turn by turn: span, KB query, response,
/// lexicalization. The decoded span feeds the next turn's copy flow.
class DialogueRunner {
 public:
  DialogueRunner(const ParamStore& params, const ModelConfig& config, const Vocabulary& vocab,
                 const KnowledgeBase* kb, DecodeOptions options);

  /// `prev_response` is R_{t-1} as delexicalized tokens.
  TurnOutput step(std::span<const std::string> prev_response, std::span<const std::string> user);
  std::size_t turn() const { return turn_; }

 private:
  const ParamStore* params_;
  ModelConfig config_;
  const Vocabulary* vocab_;
  const KnowledgeBase* kb_;
  DecodeOptions options_;
  std::unique_ptr<Tape> tape_;
  std::unique_ptr<BoundModel> model_;
  std::optional<EncodedSequence> prev_span_;
  std::size_t turn_ = 0;
};

/// Decodes a whole session, feeding the gold previous response at each turn.
std::vector<TurnOutput> run_dialogue(const ParamStore& params, const ModelConfig& config,
                                     const Vocabulary& vocab, const DialogueSession& session,
                                     const KnowledgeBase* kb, const DecodeOptions& options);

/// Sessions decoded independently; results are stored by session index, so
/// the parallel form matches the serial one exactly.
std::vector<std::vector<TurnOutput>> decode_corpus_serial(
    const ParamStore& params, const ModelConfig& config, const Vocabulary& vocab,
    const std::vector<DialogueSession>& sessions, const KnowledgeBase* kb,
    const DecodeOptions& options);
std::vector<std::vector<TurnOutput>> decode_corpus_parallel(
    const ParamStore& params, const ModelConfig& config, const Vocabulary& vocab,
    const std::vector<DialogueSession>& sessions, const KnowledgeBase* kb,
    const DecodeOptions& options);

}  // namespace copyflow
