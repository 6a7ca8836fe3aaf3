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

#include <string>
#include <vector>

#include "copyflow/corpus.hpp"
#include "copyflow/decoding.hpp"
#include "copyflow/metrics.hpp"
#include "copyflow/training.hpp"

namespace copyflow {

struct EvalReport {
  double bleu = 0.0;
  double joint_goal_accuracy = 0.0;
  double entity_match_rate = 0.0;
  double emb_average = 0.0;
  double emb_greedy = 0.0;
  double emb_extrema = 0.0;
  double predicted_keyword_proportion = 0.0;

  std::size_t dialogues_total = 0;
  std::size_t dialogues_evaluated = 0;  // entity match rate
  std::size_t dialogues_skipped = 0;
  std::size_t turns_total = 0;
  std::size_t turns_evaluated = 0;  // joint goal accuracy
  std::size_t turns_excluded = 0;
  std::size_t embedding_pairs_skipped = 0;
  std::size_t embedding_tokens_missing = 0;
  bool entity_match_undefined = false;
  bool keyword_proportion_undefined = false;

  /// Single JSON object, keys in a fixed order.
  std::string to_json() const;
  /// Aligned two-column text table.
  std::string to_table() const;
};

/// Computes every metric from decoded outputs. Responses are compared in
/// delexicalized form; turns without a gold state are excluded from joint
/// goal accuracy alongside thanks-only turns.
EvalReport score_outputs(const std::vector<DialogueSession>& sessions,
                         const std::vector<std::vector<TurnOutput>>& outputs,
                         const KnowledgeBase& kb, const EmbeddingTable& embeddings,
                         const std::vector<std::string>& stop_words = default_stop_words());

/// One JSON line per session with the decoded spans, component masses, KB
/// results and responses next to the gold data.
std::string transcripts_jsonl(const std::vector<DialogueSession>& sessions,
                              const std::vector<std::vector<TurnOutput>>& outputs);

/// Span decoding for a model trained in `mode`: fixed-length spans read by
/// slot-value intersection without supervision, eos-terminated otherwise.
DecodeOptions evaluation_decode_options(TrainingMode mode, std::size_t span_len);

struct Evaluation {
  EvalReport report;
  std::vector<std::vector<TurnOutput>> outputs;
};
/// Decodes every session and scores the outputs.
Evaluation evaluate(const ParamStore& params, const ModelConfig& config, const Vocabulary& vocab,
                    const std::vector<DialogueSession>& sessions, const KnowledgeBase& kb,
                    const DecodeOptions& options, const EmbeddingTable& embeddings,
                    bool parallel = true);

}  // namespace copyflow
