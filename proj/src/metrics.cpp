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

#include "copyflow/metrics.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>

#include "copyflow/errors.hpp"
#include "copyflow/vocab.hpp"

namespace copyflow {

double bleu(std::span<const Sentence> candidates, std::span<const Sentence> references) {
  if (candidates.size() != references.size()) {
    throw ContractError("bleu: candidate and reference counts differ");
  }
  if (candidates.empty()) throw DomainError("bleu: empty corpus");
  constexpr std::size_t kMaxN = 4;
  std::array<double, kMaxN> matches{};
  std::array<double, kMaxN> totals{};
  double cand_len = 0.0;
  double ref_len = 0.0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const Sentence& c = candidates[k];
    const Sentence& r = references[k];
    cand_len += static_cast<double>(c.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ref_counts[{r.begin() + i, r.begin() + i + n}]++;
      std::map<std::vector<std::string>, std::size_t> cand_counts;
      for (std::size_t i = 0; i + n <= c.size(); ++i) cand_counts[{c.begin() + i, c.begin() + i + n}]++;
      for (const auto& [gram, count] : cand_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += static_cast<double>(std::min(count, it->second));
        totals[n - 1] += static_cast<double>(count);
      }
    }
  }
  if (matches[0] == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < kMaxN; ++n) {
    const double p = matches[n] > 0.0 ? matches[n] / totals[n] : 1.0 / (totals[n] + 1.0);
    log_sum += std::log(p) / static_cast<double>(kMaxN);
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return bp * std::exp(log_sum);
}

RateResult joint_goal_accuracy(std::span<const StateAnnotation> predicted,
                               std::span<const StateAnnotation> gold,
                               const std::vector<bool>& thanks_only) {
  if (predicted.size() != gold.size() || (!thanks_only.empty() && thanks_only.size() != gold.size())) {
    throw ContractError("joint_goal_accuracy: misaligned turn lists");
  }
  RateResult r;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!thanks_only.empty() && thanks_only[i]) {
      ++r.skipped;
      continue;
    }
    ++r.counted;
    if (predicted[i].informable == gold[i].informable) ++correct;
  }
  r.undefined = r.counted == 0;
  r.value = r.undefined ? 0.0 : static_cast<double>(correct) / static_cast<double>(r.counted);
  return r;
}

namespace {

bool has_placeholder(const Sentence& s, const std::vector<std::string>& placeholders) {
  for (const auto& tok : s)
    if (std::find(placeholders.begin(), placeholders.end(), tok) != placeholders.end()) return true;
  return false;
}

}  // namespace

RateResult entity_match_rate(std::span<const DialogueOutcome> dialogues, const KnowledgeBase& kb) {
  const auto placeholders = kb.schema.placeholders();
  RateResult r;
  std::size_t matched = 0;
  for (const auto& d : dialogues) {
    std::size_t last = d.gold_responses.size();
    for (std::size_t t = 0; t < d.gold_responses.size(); ++t)
      if (has_placeholder(d.gold_responses[t], placeholders)) last = t;
    if (last == d.gold_responses.size()) {
      ++r.skipped;
      continue;
    }
    ++r.counted;
    bool decoded = false;
    for (const auto& s : d.predicted_responses) decoded = decoded || has_placeholder(s, placeholders);
    if (!decoded || last >= d.predicted.size()) continue;
    const auto matches = kb_search(kb, d.predicted[last]);
    if (!matches.empty() && matches.front().id == d.target_entity) ++matched;
  }
  r.undefined = r.counted == 0;
  r.value = r.undefined ? 0.0 : static_cast<double>(matched) / static_cast<double>(r.counted);
  return r;
}

const std::vector<double>* EmbeddingTable::find(const std::string& token) const {
  auto it = vectors.find(token);
  return it == vectors.end() ? nullptr : &it->second;
}

EmbeddingTable parse_embeddings(std::string_view text) {
  EmbeddingTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token) || token[0] == '#') continue;
    std::vector<double> v;
    std::string field;
    while (ls >> field) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw DataError("embeddings line " + std::to_string(lineno) + ": bad number '" + field + "'");
      }
    }
    if (v.empty()) throw DataError("embeddings line " + std::to_string(lineno) + ": no vector");
    if (table.dim == 0) table.dim = v.size();
    if (v.size() != table.dim) {
      throw DataError("embeddings line " + std::to_string(lineno) + ": dimension " +
                      std::to_string(v.size()) + ", expected " + std::to_string(table.dim));
    }
    table.vectors[token] = std::move(v);
  }
  return table;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_embeddings(std::string(std::istreambuf_iterator<char>(in), {}));
}

EmbeddingTable synthetic_embeddings(std::span<const std::string> tokens, std::size_t dim,
                                    std::uint64_t seed) {
  EmbeddingTable table;
  table.dim = dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::set<std::string> sorted(tokens.begin(), tokens.end());
  for (const auto& t : sorted) {
    std::vector<double> v(dim);
    for (double& x : v) x = normal(rng);
    table.vectors[t] = std::move(v);
  }
  return table;
}

std::string embeddings_to_string(const EmbeddingTable& table) {
  std::string out;
  char buf[32];
  for (const auto& [token, v] : table.vectors) {
    out += token;
    for (double x : v) {
      std::snprintf(buf, sizeof(buf), " %.17g", x);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  if (a == b) return 1.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<const std::vector<double>*> lookup(const Sentence& s, const EmbeddingTable& table,
                                               std::size_t& missing) {
  std::vector<const std::vector<double>*> out;
  for (const auto& tok : s) {
    if (const auto* v = table.find(tok)) {
      out.push_back(v);
    } else {
      ++missing;
    }
  }
  return out;
}

std::vector<double> mean_vector(const std::vector<const std::vector<double>*>& vs, std::size_t dim) {
  std::vector<double> m(dim, 0.0);
  for (const auto* v : vs)
    for (std::size_t i = 0; i < dim; ++i) m[i] += (*v)[i];
  for (double& x : m) x /= static_cast<double>(vs.size());
  return m;
}

std::vector<double> extrema_vector(const std::vector<const std::vector<double>*>& vs,
                                   std::size_t dim) {
  std::vector<double> out(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    double lo = std::numeric_limits<double>::infinity();
    for (const auto* v : vs) {
      hi = std::max(hi, (*v)[i]);
      lo = std::min(lo, (*v)[i]);
    }
    out[i] = hi >= std::abs(lo) ? hi : lo;
  }
  return out;
}

double greedy_direction(const std::vector<const std::vector<double>*>& from,
                        const std::vector<const std::vector<double>*>& to) {
  double total = 0.0;
  for (const auto* a : from) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto* b : to) best = std::max(best, cosine(*a, *b));
    total += best;
  }
  return total / static_cast<double>(from.size());
}

}  // namespace

EmbeddingScore embedding_metric(EmbeddingVariant variant, std::span<const Sentence> candidates,
                                std::span<const Sentence> references, const EmbeddingTable& table) {
  if (candidates.size() != references.size()) {
    throw ContractError("embedding_metric: candidate and reference counts differ");
  }
  EmbeddingScore score;
  double total = 0.0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto c = lookup(candidates[k], table, score.tokens_missing);
    const auto r = lookup(references[k], table, score.tokens_missing);
    if (c.empty() || r.empty()) {
      ++score.pairs_skipped;
      continue;
    }
    double value = 0.0;
    switch (variant) {
      case EmbeddingVariant::average:
        value = cosine(mean_vector(c, table.dim), mean_vector(r, table.dim));
        break;
      case EmbeddingVariant::greedy:
        value = 0.5 * (greedy_direction(c, r) + greedy_direction(r, c));
        break;
      case EmbeddingVariant::extrema:
        value = cosine(extrema_vector(c, table.dim), extrema_vector(r, table.dim));
        break;
    }
    total += value;
    ++score.pairs_scored;
  }
  score.value = score.pairs_scored ? total / static_cast<double>(score.pairs_scored) : 0.0;
  return score;
}

const std::vector<std::string>& default_stop_words() {
  static const std::vector<std::string> kWords = {
      "a",    "an",   "the",  "is",   "are", "was",  "be",   "to",   "of",  "and", "or",
      "in",   "on",   "at",   "for",  "with", "it",  "i",    "you",  "me",  "my",  "your",
      "we",   "that", "this", "what", "do",  "does", "have", "has",  "can", "would", "like",
      "please", ".",  ",",    "?",    "!",   "there", "any", "some", "am",  "no",  "not"};
  return kWords;
}

RateResult predicted_keyword_proportion(std::span<const KeywordTurn> turns,
                                        const std::vector<std::string>& stop_words) {
  const std::set<std::string> stop(stop_words.begin(), stop_words.end());
  const auto& reserved = Vocabulary::reserved_tokens();
  std::size_t numerator = 0;
  RateResult r;
  for (const auto& t : turns) {
    const std::set<std::string> context(t.context.begin(), t.context.end());
    const std::set<std::string> gold(t.gold_response.begin(), t.gold_response.end());
    for (const auto& tok : t.span) {
      if (stop.count(tok) || std::find(reserved.begin(), reserved.end(), tok) != reserved.end()) {
        continue;
      }
      if (context.count(tok)) {
        ++r.skipped;
        continue;
      }
      ++r.counted;
      if (gold.count(tok)) ++numerator;
    }
  }
  r.undefined = r.counted == 0;
  r.value = r.undefined ? 0.0 : static_cast<double>(numerator) / static_cast<double>(r.counted);
  return r;
}

}  // namespace copyflow
