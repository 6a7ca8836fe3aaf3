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

#include "copyflow/evaluation.hpp"

#include <cstdio>

#include "copyflow/errors.hpp"
#include "copyflow/vocab.hpp"
#include "json.hpp"

namespace copyflow {

using ojson = nlohmann::ordered_json;

EvalReport score_outputs(const std::vector<DialogueSession>& sessions,
                         const std::vector<std::vector<TurnOutput>>& outputs,
                         const KnowledgeBase& kb, const EmbeddingTable& embeddings,
                         const std::vector<std::string>& stop_words) {
  if (sessions.size() != outputs.size()) {
    throw ContractError("score_outputs: one output list per session required");
  }
  EvalReport report;
  report.dialogues_total = sessions.size();

  std::vector<Sentence> candidates, references;
  std::vector<StateAnnotation> predicted_states, gold_states;
  std::vector<bool> excluded;
  std::vector<DialogueOutcome> outcomes;
  std::vector<KeywordTurn> keyword_turns;
  std::size_t no_state = 0;
  for (std::size_t k = 0; k < sessions.size(); ++k) {
    const auto& s = sessions[k];
    const auto& out = outputs[k];
    if (out.size() != s.turns.size()) throw ContractError("score_outputs: turn count mismatch");
    DialogueOutcome outcome;
    outcome.target_entity = s.target_entity;
    Sentence prev;
    for (std::size_t t = 0; t < s.turns.size(); ++t) {
      const Turn& turn = s.turns[t];
      const TurnOutput& o = out[t];
      ++report.turns_total;
      candidates.push_back(o.response_delex);
      references.push_back(turn.resp_delex);
      if (turn.state) {
        predicted_states.push_back(o.state);
        gold_states.push_back(*turn.state);
        excluded.push_back(turn.thanks_only);
      } else {
        ++no_state;
      }
      outcome.predicted.push_back(o.state.informable);
      outcome.predicted_responses.push_back(o.response_delex);
      outcome.gold_responses.push_back(turn.resp_delex);

      KeywordTurn kt;
      kt.span = o.span;
      kt.context = prev;
      kt.context.insert(kt.context.end(), turn.user.begin(), turn.user.end());
      kt.gold_response = turn.resp_delex;
      keyword_turns.push_back(std::move(kt));
      prev = turn.resp_delex;
    }
    outcomes.push_back(std::move(outcome));
  }

  report.bleu = candidates.empty() ? 0.0 : bleu(candidates, references);

  const RateResult jga = joint_goal_accuracy(predicted_states, gold_states, excluded);
  report.joint_goal_accuracy = jga.value;
  report.turns_evaluated = jga.counted;
  report.turns_excluded = jga.skipped + no_state;

  const RateResult emr = entity_match_rate(outcomes, kb);
  report.entity_match_rate = emr.value;
  report.dialogues_evaluated = emr.counted;
  report.dialogues_skipped = emr.skipped;
  report.entity_match_undefined = emr.undefined;

  const auto avg = embedding_metric(EmbeddingVariant::average, candidates, references, embeddings);
  const auto greedy = embedding_metric(EmbeddingVariant::greedy, candidates, references, embeddings);
  const auto extrema =
      embedding_metric(EmbeddingVariant::extrema, candidates, references, embeddings);
  report.emb_average = avg.value;
  report.emb_greedy = greedy.value;
  report.emb_extrema = extrema.value;
  report.embedding_pairs_skipped = avg.pairs_skipped;
  report.embedding_tokens_missing = avg.tokens_missing;

  const RateResult pkp = predicted_keyword_proportion(keyword_turns, stop_words);
  report.predicted_keyword_proportion = pkp.value;
  report.keyword_proportion_undefined = pkp.undefined;
  return report;
}

std::string EvalReport::to_json() const {
  ojson j;
  j["bleu"] = bleu;
  j["joint_goal_accuracy"] = joint_goal_accuracy;
  j["entity_match_rate"] = entity_match_rate;
  j["emb_average"] = emb_average;
  j["emb_greedy"] = emb_greedy;
  j["emb_extrema"] = emb_extrema;
  j["predicted_keyword_proportion"] = predicted_keyword_proportion;
  j["counts"] = ojson{{"dialogues_total", dialogues_total},
                      {"dialogues_evaluated", dialogues_evaluated},
                      {"dialogues_skipped", dialogues_skipped},
                      {"turns_total", turns_total},
                      {"turns_evaluated", turns_evaluated},
                      {"turns_excluded", turns_excluded},
                      {"embedding_pairs_skipped", embedding_pairs_skipped},
                      {"embedding_tokens_missing", embedding_tokens_missing}};
  j["flags"] = ojson{{"entity_match_undefined", entity_match_undefined},
                     {"keyword_proportion_undefined", keyword_proportion_undefined}};
  return j.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
  std::string out;
  auto row = [&](const char* name, double value) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-30s %10.4f\n", name, value);
    out += buf;
  };
  auto count = [&](const char* name, std::size_t value) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-30s %10zu\n", name, value);
    out += buf;
  };
  row("bleu", bleu);
  row("joint_goal_accuracy", joint_goal_accuracy);
  row(entity_match_undefined ? "entity_match_rate (undefined)" : "entity_match_rate",
      entity_match_rate);
  row("emb_average", emb_average);
  row("emb_greedy", emb_greedy);
  row("emb_extrema", emb_extrema);
  row(keyword_proportion_undefined ? "predicted_keywords (undefined)" : "predicted_keywords",
      predicted_keyword_proportion);
  count("dialogues_total", dialogues_total);
  count("dialogues_evaluated", dialogues_evaluated);
  count("dialogues_skipped", dialogues_skipped);
  count("turns_total", turns_total);
  count("turns_evaluated", turns_evaluated);
  count("turns_excluded", turns_excluded);
  return out;
}

std::string transcripts_jsonl(const std::vector<DialogueSession>& sessions,
                              const std::vector<std::vector<TurnOutput>>& outputs) {
  std::string out;
  for (std::size_t k = 0; k < sessions.size() && k < outputs.size(); ++k) {
    const auto& s = sessions[k];
    ojson turns = ojson::array();
    for (std::size_t t = 0; t < s.turns.size() && t < outputs[k].size(); ++t) {
      const auto& o = outputs[k][t];
      ojson inf = ojson::object();
      for (const auto& [slot, value] : o.state.informable) inf[slot] = value;
      ojson gold = nullptr;
      if (s.turns[t].state) {
        gold = ojson::object();
        for (const auto& [slot, value] : s.turns[t].state->informable) gold[slot] = value;
      }
      turns.push_back(ojson{{"user", join(s.turns[t].user)},
                            {"span", join(o.span)},
                            {"span_components", o.span_components},
                            {"constraints", inf},
                            {"kb_matches", o.kb_matches},
                            {"entity", o.entity_id},
                            {"response_delex", join(o.response_delex)},
                            {"response", join(o.response)},
                            {"truncated", o.truncated},
                            {"gold_constraints", gold},
                            {"gold_response", join(s.turns[t].resp_delex)}});
    }
    out += ojson{{"id", s.id}, {"target_entity", s.target_entity}, {"turns", turns}}.dump();
    out += '\n';
  }
  return out;
}

DecodeOptions evaluation_decode_options(TrainingMode mode, std::size_t span_len) {
  DecodeOptions o;
  o.span.span_len = span_len;
  if (mode == TrainingMode::unsupervised) {
    o.span.mode = SpanDecodeConfig::Mode::fixed_length;
    o.intersect_slot_values = true;
  }
  return o;
}

Evaluation evaluate(const ParamStore& params, const ModelConfig& config, const Vocabulary& vocab,
                    const std::vector<DialogueSession>& sessions, const KnowledgeBase& kb,
                    const DecodeOptions& options, const EmbeddingTable& embeddings,
                    bool parallel) {
  Evaluation e;
  e.outputs = parallel ? decode_corpus_parallel(params, config, vocab, sessions, &kb, options)
                       : decode_corpus_serial(params, config, vocab, sessions, &kb, options);
  e.report = score_outputs(sessions, e.outputs, kb, embeddings);
  return e;
}

}  // namespace copyflow
