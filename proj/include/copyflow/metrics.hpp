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

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "copyflow/corpus.hpp"

namespace copyflow {

using Sentence = std::vector<std::string>;

/// Corpus BLEU-4: uniform weights, clipped n-gram counts, brevity penalty
/// exp(1 - r/c) when c < r. A zero match count for n > 1 is smoothed to
/// (0 + 1) / (total + 1); a zero unigram match gives 0.
/// Throws DomainError on an empty corpus, ContractError on unequal lengths.
double bleu(std::span<const Sentence> candidates, std::span<const Sentence> references);

struct RateResult {
  double value = 0.0;
  std::size_t counted = 0;
  std::size_t skipped = 0;
  /// Nothing was counted; `value` is 0.
  bool undefined = false;
};

/// A turn is correct iff the predicted informable constraints equal gold.
/// Turns flagged thanks-only are skipped. Throws ContractError on misaligned
/// inputs.
RateResult joint_goal_accuracy(std::span<const StateAnnotation> predicted,
                               std::span<const StateAnnotation> gold,
                               const std::vector<bool>& thanks_only);

struct DialogueOutcome {
  std::vector<Constraints> predicted;  // per turn
  std::vector<Sentence> predicted_responses;
  std::vector<Sentence> gold_responses;
  std::string target_entity;
};

/// Per dialogue: find the last turn whose gold response holds a placeholder
/// (no such turn: skipped). The dialogue matches iff the model decoded at
/// least one placeholder and the first KB match of the predicted constraints
/// at that turn is the target entity.
RateResult entity_match_rate(std::span<const DialogueOutcome> dialogues, const KnowledgeBase& kb);

// ---------------------------------------------------------------------------
// Embedding similarity.

/// Text format: one token per line followed by its vector components,
/// whitespace-separated. Lines starting with '#' and blank lines are ignored;
/// every vector must have the same dimension.
struct EmbeddingTable {
  std::size_t dim = 0;
  std::map<std::string, std::vector<double>> vectors;

  const std::vector<double>* find(const std::string& token) const;
};
EmbeddingTable load_embeddings(const std::filesystem::path& path);
EmbeddingTable parse_embeddings(std::string_view text);
/// Seeded Gaussian vectors for `tokens`, for runs without an embedding file.
EmbeddingTable synthetic_embeddings(std::span<const std::string> tokens, std::size_t dim,
                                    std::uint64_t seed);
std::string embeddings_to_string(const EmbeddingTable& table);

enum class EmbeddingVariant { average, greedy, extrema };

struct EmbeddingScore {
  double value = 0.0;
  std::size_t pairs_scored = 0;
  std::size_t pairs_skipped = 0;
  std::size_t tokens_missing = 0;
};
EmbeddingScore embedding_metric(EmbeddingVariant variant, std::span<const Sentence> candidates,
                                std::span<const Sentence> references, const EmbeddingTable& table);

// ---------------------------------------------------------------------------
// Predicted keywords.

/// Function words ignored by the keyword proportion.
const std::vector<std::string>& default_stop_words();

struct KeywordTurn {
  Sentence span;
  Sentence context;
  Sentence gold_response;
};

/// Span tokens absent from the context that also occur in the gold response,
/// over all span tokens absent from the context. Stop words and reserved
/// tokens are ignored. A zero denominator gives 0 with `undefined` set.
RateResult predicted_keyword_proportion(std::span<const KeywordTurn> turns,
                                        const std::vector<std::string>& stop_words);

}  // namespace copyflow
