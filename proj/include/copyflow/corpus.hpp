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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace copyflow {

/// Informable slots constrain knowledge-base search; requestable slots are
/// attributes a user can ask for. Every requestable slot and the entity name
/// have a placeholder token "<slot>_SLOT".
struct SlotSchema {
  struct Informable {
    std::string name;
    std::vector<std::string> values;
  };

  std::vector<Informable> informable;
  std::vector<std::string> requestable;
  std::string name_attribute = "name";

  std::vector<std::string> placeholders() const;
  static std::string placeholder(std::string_view attribute);
  /// Index of the informable slot that owns `value`.
  std::optional<std::size_t> slot_of_value(std::string_view value) const;
  std::optional<std::size_t> informable_index(std::string_view slot) const;
  bool is_requestable(std::string_view slot) const;
  /// All informable values, in schema order.
  std::vector<std::string> all_values() const;
  /// Slot names unique, values unique across the schema.
  void validate() const;
};

struct Entity {
  std::string id;
  std::map<std::string, std::string> attributes;
};

struct KnowledgeBase {
  SlotSchema schema;
  std::vector<Entity> entities;

  const Entity* find(std::string_view id) const;
};

using Constraints = std::map<std::string, std::string>;

/// Dialogue state: accumulated informable constraints plus the requestable
/// slots asked for so far.
struct StateAnnotation {
  Constraints informable;
  std::vector<std::string> requestable;

  /// values (schema slot order) <delim> requestables (schema order) </s>
  std::vector<std::string> to_span(const SlotSchema& schema) const;
  friend bool operator==(const StateAnnotation&, const StateAnnotation&) = default;
};

/// Reads constraints from a decoded span. Tokens before the first delimiter
/// that are schema values become constraints; the first value seen for a slot
/// wins. With `intersect_all`, the whole span is intersected with the schema
/// values (used for spans learned without annotation).
StateAnnotation parse_span(std::span<const std::string> tokens, const SlotSchema& schema,
                           bool intersect_all);

struct Turn {
  std::vector<std::string> user;
  std::vector<std::string> resp_delex;
  std::vector<std::string> resp_surface;
  std::optional<StateAnnotation> state;
  bool thanks_only = false;
};

struct DialogueSession {
  std::string id;
  std::vector<Turn> turns;
  std::string target_entity;
};

struct CorpusSplit {
  std::vector<DialogueSession> train;
  std::vector<DialogueSession> validation;
  std::vector<DialogueSession> test;
};

/// First 3/5 train, next 1/5 validation, rest test.
CorpusSplit split_corpus(const std::vector<DialogueSession>& sessions);

/// Splits on whitespace; . , ? ! become tokens of their own. Case is kept.
std::vector<std::string> tokenize(std::string_view text);
std::string join(std::span<const std::string> tokens, std::string_view sep = " ");

// ---------------------------------------------------------------------------
// Files. Corpus: JSON lines, the first line a header
// {"format":"copyflow-corpus","version":1}; each further line one session.
// KB: one JSON document {"format":"copyflow-kb","version":1,"schema":...,
// "entities":[...]}.

inline constexpr int kCorpusFormatVersion = 1;

void save_corpus(const std::filesystem::path& path, const std::vector<DialogueSession>& sessions);
std::string corpus_to_string(const std::vector<DialogueSession>& sessions);
/// Validates against `schema`; malformed lines raise DataError with line
/// numbers and offending fields. An empty file is an empty corpus.
std::vector<DialogueSession> load_corpus(const std::filesystem::path& path,
                                         const SlotSchema& schema);
std::vector<DialogueSession> parse_corpus(std::string_view text, const SlotSchema& schema);

void save_kb(const std::filesystem::path& path, const KnowledgeBase& kb);
KnowledgeBase load_kb(const std::filesystem::path& path);

/// Adapter for the Cambridge restaurant data format (dialogue list with
/// per-turn "usr"/"sys" records and a restaurant database list).
struct AdaptedCorpus {
  std::vector<DialogueSession> sessions;
  KnowledgeBase kb;
};
/// Words that mark a user turn as a plain thank-you when the turn carries no
/// inform or request act.
const std::vector<std::string>& default_thanks_keywords();
AdaptedCorpus adapt_camrest(std::string_view dialogues_json, std::string_view database_json,
                            const std::vector<std::string>& thanks_keywords =
                                default_thanks_keywords());

// ---------------------------------------------------------------------------
// Knowledge base interaction.

/// Entities satisfying every constraint exactly, in id order. Throws
/// ContractError for a constraint slot not in the schema.
std::vector<Entity> kb_search(const KnowledgeBase& kb, const Constraints& constraints);

/// Longest-match replacement of the entity's name and requestable attribute
/// values by placeholder tokens.
std::vector<std::string> delexicalize(std::span<const std::string> surface, const Entity& entity,
                                      const SlotSchema& schema);
/// Replaces placeholders with the entity's attribute tokens.
std::vector<std::string> lexicalize(std::span<const std::string> delex, const Entity& entity,
                                    const SlotSchema& schema);

// ---------------------------------------------------------------------------
// Synthetic corpus.

struct GeneratorConfig {
  std::size_t slots = 3;
  std::size_t values_per_slot = 20;
  std::size_t entities = 60;
  std::size_t sessions = 800;
  std::size_t min_turns = 1;
  std::size_t max_turns = 4;
  std::size_t templates_per_act = 3;
  double revision_prob = 0.2;
  double request_prob = 0.4;
  double thanks_prob = 0.2;
};

struct SyntheticCorpus {
  std::vector<DialogueSession> sessions;
  KnowledgeBase kb;
};

/// Template-based task dialogues grounded in a generated KB. Throws
/// ConfigError for configurations that cannot be realised.
SyntheticCorpus generate_synthetic_corpus(const GeneratorConfig& config, std::uint64_t seed);

}  // namespace copyflow
