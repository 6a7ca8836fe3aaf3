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

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "copyflow/corpus.hpp"
#include "copyflow/errors.hpp"
#include "copyflow/vocab.hpp"
#include "json.hpp"

namespace copyflow {

using ojson = nlohmann::ordered_json;

std::string SlotSchema::placeholder(std::string_view attribute) {
  return std::string(attribute) + "_SLOT";
}

std::vector<std::string> SlotSchema::placeholders() const {
  std::vector<std::string> out{placeholder(name_attribute)};
  for (const auto& r : requestable) out.push_back(placeholder(r));
  return out;
}

std::optional<std::size_t> SlotSchema::slot_of_value(std::string_view value) const {
  for (std::size_t s = 0; s < informable.size(); ++s) {
    const auto& vals = informable[s].values;
    if (std::find(vals.begin(), vals.end(), value) != vals.end()) return s;
  }
  return std::nullopt;
}

std::optional<std::size_t> SlotSchema::informable_index(std::string_view slot) const {
  for (std::size_t s = 0; s < informable.size(); ++s)
    if (informable[s].name == slot) return s;
  return std::nullopt;
}

bool SlotSchema::is_requestable(std::string_view slot) const {
  return std::find(requestable.begin(), requestable.end(), slot) != requestable.end();
}

std::vector<std::string> SlotSchema::all_values() const {
  std::vector<std::string> out;
  for (const auto& s : informable) out.insert(out.end(), s.values.begin(), s.values.end());
  return out;
}

void SlotSchema::validate() const {
  std::set<std::string> names;
  std::set<std::string> values;
  for (const auto& s : informable) {
    if (!names.insert(s.name).second) throw DataError("duplicate slot name '" + s.name + "'");
    for (const auto& v : s.values)
      if (!values.insert(v).second) throw DataError("slot value '" + v + "' is not unique");
  }
  for (const auto& r : requestable)
    if (!names.insert(r).second) throw DataError("duplicate slot name '" + r + "'");
}

const Entity* KnowledgeBase::find(std::string_view id) const {
  for (const auto& e : entities)
    if (e.id == id) return &e;
  return nullptr;
}

std::vector<std::string> StateAnnotation::to_span(const SlotSchema& schema) const {
  std::vector<std::string> out;
  for (const auto& slot : schema.informable) {
    auto it = informable.find(slot.name);
    if (it != informable.end()) out.push_back(it->second);
  }
  out.push_back(Vocabulary::reserved_tokens()[Vocabulary::kSpanDelim]);
  for (const auto& r : schema.requestable) {
    if (std::find(requestable.begin(), requestable.end(), r) != requestable.end()) out.push_back(r);
  }
  out.push_back(Vocabulary::reserved_tokens()[Vocabulary::kEosSpan]);
  return out;
}

StateAnnotation parse_span(std::span<const std::string> tokens, const SlotSchema& schema,
                           bool intersect_all) {
  const auto& delim = Vocabulary::reserved_tokens()[Vocabulary::kSpanDelim];
  const auto& eos = Vocabulary::reserved_tokens()[Vocabulary::kEosSpan];
  StateAnnotation state;
  bool informable_region = true;
  for (const auto& tok : tokens) {
    if (tok == eos && !intersect_all) break;
    if (tok == delim) {
      informable_region = false;
      continue;
    }
    if (informable_region || intersect_all) {
      if (auto slot = schema.slot_of_value(tok)) {
        state.informable.emplace(schema.informable[*slot].name, tok);
        continue;
      }
    }
    if ((!informable_region || intersect_all) && schema.is_requestable(tok) &&
        std::find(state.requestable.begin(), state.requestable.end(), tok) ==
            state.requestable.end()) {
      state.requestable.push_back(tok);
    }
  }
  return state;
}

CorpusSplit split_corpus(const std::vector<DialogueSession>& sessions) {
  CorpusSplit split;
  const std::size_t n = sessions.size();
  const std::size_t train_end = n * 3 / 5;
  const std::size_t valid_end = train_end + n / 5;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < train_end) {
      split.train.push_back(sessions[i]);
    } else if (i < valid_end) {
      split.validation.push_back(sessions[i]);
    } else {
      split.test.push_back(sessions[i]);
    }
  }
  return split;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c == '.' || c == ',' || c == '?' || c == '!') {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(ch);
    }
  }
  flush();
  return out;
}

std::string join(std::span<const std::string> tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

ojson session_to_json(const DialogueSession& s) {
  ojson j;
  j["id"] = s.id;
  ojson turns = ojson::array();
  for (const auto& t : s.turns) {
    ojson jt;
    jt["user"] = join(t.user);
    jt["resp_delex"] = join(t.resp_delex);
    jt["resp_surface"] = join(t.resp_surface);
    if (t.state) {
      ojson inf = ojson::object();
      for (const auto& [k, v] : t.state->informable) inf[k] = v;
      jt["state"] = ojson{{"inf", inf}, {"req", t.state->requestable}};
    } else {
      jt["state"] = nullptr;
    }
    jt["thanks"] = t.thanks_only;
    turns.push_back(std::move(jt));
  }
  j["turns"] = std::move(turns);
  j["target_entity"] = s.target_entity;
  return j;
}

DialogueSession session_from_json(const ojson& j, const SlotSchema& schema, std::size_t line) {
  std::vector<std::string> problems;
  auto where = [line](const std::string& field) {
    return "line " + std::to_string(line) + ": " + field;
  };
  DialogueSession s;
  if (!j.is_object()) throw DataError(where("session is not a JSON object"));
  if (!j.contains("id") || !j["id"].is_string()) problems.push_back(where("id"));
  else s.id = j["id"].get<std::string>();
  if (j.contains("target_entity") && j["target_entity"].is_string()) {
    s.target_entity = j["target_entity"].get<std::string>();
  } else if (j.contains("target_entity") && !j["target_entity"].is_null()) {
    problems.push_back(where("target_entity"));
  }
  if (!j.contains("turns") || !j["turns"].is_array() || j["turns"].empty()) {
    problems.push_back(where("turns (need at least one)"));
  } else {
    std::size_t ti = 0;
    for (const auto& jt : j["turns"]) {
      const std::string prefix = "turns[" + std::to_string(ti++) + "].";
      Turn t;
      for (const char* field : {"user", "resp_delex", "resp_surface"}) {
        if (!jt.contains(field) || !jt[field].is_string()) {
          problems.push_back(where(prefix + field));
        }
      }
      if (!problems.empty()) continue;
      t.user = split_ws(jt["user"].get<std::string>());
      t.resp_delex = split_ws(jt["resp_delex"].get<std::string>());
      t.resp_surface = split_ws(jt["resp_surface"].get<std::string>());
      if (jt.contains("thanks")) {
        if (!jt["thanks"].is_boolean()) problems.push_back(where(prefix + "thanks"));
        else t.thanks_only = jt["thanks"].get<bool>();
      }
      if (jt.contains("state") && !jt["state"].is_null()) {
        const auto& st = jt["state"];
        StateAnnotation ann;
        if (!st.is_object() || !st.contains("inf") || !st["inf"].is_object()) {
          problems.push_back(where(prefix + "state.inf"));
        } else {
          for (const auto& [slot, value] : st["inf"].items()) {
            if (!value.is_string()) {
              problems.push_back(where(prefix + "state.inf." + slot));
              continue;
            }
            const auto idx = schema.informable_index(slot);
            const auto v = value.get<std::string>();
            if (!idx || std::find(schema.informable[*idx].values.begin(),
                                  schema.informable[*idx].values.end(),
                                  v) == schema.informable[*idx].values.end()) {
              problems.push_back(where(prefix + "state.inf." + slot + " (not in schema)"));
              continue;
            }
            ann.informable.emplace(slot, v);
          }
        }
        if (st.contains("req")) {
          if (!st["req"].is_array()) {
            problems.push_back(where(prefix + "state.req"));
          } else {
            for (const auto& r : st["req"]) {
              if (!r.is_string() || !schema.is_requestable(r.get<std::string>())) {
                problems.push_back(where(prefix + "state.req (not in schema)"));
                continue;
              }
              ann.requestable.push_back(r.get<std::string>());
            }
          }
        }
        t.state = std::move(ann);
      }
      s.turns.push_back(std::move(t));
    }
  }
  if (!problems.empty()) {
    std::string msg = "corpus schema violation:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  return s;
}

ojson schema_to_json(const SlotSchema& schema) {
  ojson inf = ojson::array();
  for (const auto& s : schema.informable) inf.push_back(ojson{{"name", s.name}, {"values", s.values}});
  return ojson{{"informable", inf},
               {"requestable", schema.requestable},
               {"name_attribute", schema.name_attribute}};
}

SlotSchema schema_from_json(const ojson& j) {
  SlotSchema schema;
  for (const auto& s : j.at("informable")) {
    schema.informable.push_back(
        {s.at("name").get<std::string>(), s.at("values").get<std::vector<std::string>>()});
  }
  schema.requestable = j.at("requestable").get<std::vector<std::string>>();
  if (j.contains("name_attribute")) schema.name_attribute = j["name_attribute"].get<std::string>();
  schema.validate();
  return schema;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << data;
}

}  // namespace

std::string corpus_to_string(const std::vector<DialogueSession>& sessions) {
  std::string out = ojson{{"format", "copyflow-corpus"}, {"version", kCorpusFormatVersion}}.dump();
  out += '\n';
  for (const auto& s : sessions) {
    out += session_to_json(s).dump();
    out += '\n';
  }
  return out;
}

void save_corpus(const std::filesystem::path& path, const std::vector<DialogueSession>& sessions) {
  write_file(path, corpus_to_string(sessions));
}

std::vector<DialogueSession> parse_corpus(std::string_view text, const SlotSchema& schema) {
  std::vector<DialogueSession> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("line " + std::to_string(lineno) + ": malformed JSON (" + e.what() + ")");
    }
    if (!header_seen) {
      header_seen = true;
      if (!j.is_object() || j.value("format", "") != "copyflow-corpus") {
        throw DataError("line 1: missing copyflow-corpus header");
      }
      if (j.value("version", 0) != kCorpusFormatVersion) {
        throw DataError("line 1: unsupported corpus version");
      }
      continue;
    }
    out.push_back(session_from_json(j, schema, lineno));
  }
  return out;
}

std::vector<DialogueSession> load_corpus(const std::filesystem::path& path,
                                         const SlotSchema& schema) {
  return parse_corpus(read_file(path), schema);
}

void save_kb(const std::filesystem::path& path, const KnowledgeBase& kb) {
  ojson entities = ojson::array();
  for (const auto& e : kb.entities) {
    ojson attrs = ojson::object();
    for (const auto& [k, v] : e.attributes) attrs[k] = v;
    entities.push_back(ojson{{"id", e.id}, {"attributes", attrs}});
  }
  ojson j{{"format", "copyflow-kb"},
          {"version", kCorpusFormatVersion},
          {"schema", schema_to_json(kb.schema)},
          {"entities", entities}};
  write_file(path, j.dump(1) + "\n");
}

KnowledgeBase load_kb(const std::filesystem::path& path) {
  ojson j;
  try {
    j = ojson::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
  if (j.value("format", "") != "copyflow-kb") throw DataError(path.string() + ": not a KB file");
  KnowledgeBase kb;
  try {
    kb.schema = schema_from_json(j.at("schema"));
    std::set<std::string> ids;
    for (const auto& je : j.at("entities")) {
      Entity e;
      e.id = je.at("id").get<std::string>();
      if (!ids.insert(e.id).second) throw DataError("duplicate entity id '" + e.id + "'");
      for (const auto& [k, v] : je.at("attributes").items()) e.attributes[k] = v.get<std::string>();
      kb.entities.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return kb;
}

namespace {

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string join_value(const std::string& value) {
  std::string out;
  for (const auto& tok : tokenize(lowercase(value))) {
    if (!out.empty()) out += '_';
    out += tok;
  }
  return out;
}

// Rewrites multi-word slot values inside a token stream as single joined tokens.
std::vector<std::string> merge_values(std::vector<std::string> tokens,
                                      const std::vector<std::vector<std::string>>& multiword) {
  for (const auto& words : multiword) {
    if (words.size() < 2) continue;
    std::vector<std::string> out;
    for (std::size_t i = 0; i < tokens.size();) {
      if (i + words.size() <= tokens.size() &&
          std::equal(words.begin(), words.end(), tokens.begin() + static_cast<long>(i))) {
        out.push_back(join(words, "_"));
        i += words.size();
      } else {
        out.push_back(tokens[i++]);
      }
    }
    tokens = std::move(out);
  }
  return tokens;
}

}  // namespace

const std::vector<std::string>& default_thanks_keywords() {
  static const std::vector<std::string> words{"thank", "thanks", "cheers", "bye", "goodbye"};
  return words;
}

AdaptedCorpus adapt_camrest(std::string_view dialogues_json, std::string_view database_json,
                            const std::vector<std::string>& thanks_keywords) {
  AdaptedCorpus out;
  ojson dialogues, db;
  try {
    dialogues = ojson::parse(dialogues_json);
    db = ojson::parse(database_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("camrest adapter: ") + e.what());
  }
  const std::vector<std::string> inf_slots = {"food", "pricerange", "area"};
  const std::vector<std::string> req_slots = {"phone", "address", "postcode"};
  SlotSchema& schema = out.kb.schema;
  for (const auto& slot : inf_slots) schema.informable.push_back({slot, {}});
  schema.requestable = req_slots;

  std::vector<std::vector<std::string>> multiword;
  std::size_t index = 0;
  for (const auto& row : db) {
    Entity e;
    char id[32];
    std::snprintf(id, sizeof(id), "e%04zu", index++);
    e.id = id;
    for (const auto& [k, v] : row.items()) {
      if (!v.is_string()) continue;
      const bool informable = std::find(inf_slots.begin(), inf_slots.end(), k) != inf_slots.end();
      e.attributes[k] = informable ? join_value(v.get<std::string>())
                                   : join(tokenize(lowercase(v.get<std::string>())));
    }
    for (std::size_t s = 0; s < inf_slots.size(); ++s) {
      auto it = e.attributes.find(inf_slots[s]);
      if (it == e.attributes.end()) continue;
      auto& vals = schema.informable[s].values;
      if (std::find(vals.begin(), vals.end(), it->second) == vals.end()) {
        vals.push_back(it->second);
        multiword.push_back(tokenize(lowercase(row[inf_slots[s]].get<std::string>())));
      }
    }
    out.kb.entities.push_back(std::move(e));
  }
  for (auto& s : schema.informable) std::sort(s.values.begin(), s.values.end());
  std::sort(multiword.begin(), multiword.end(),
            [](const auto& a, const auto& b) { return a.size() > b.size(); });

  std::size_t dialogue_index = 0;
  for (const auto& dlg : dialogues) {
    DialogueSession session;
    session.id = dlg.contains("dialogue_id") ? dlg["dialogue_id"].dump()
                                             : std::to_string(dialogue_index);
    ++dialogue_index;
    StateAnnotation state;
    for (const auto& turn : dlg.at("dial")) {
      Turn t;
      const auto& usr = turn.at("usr");
      t.user = merge_values(tokenize(lowercase(usr.at("transcript").get<std::string>())), multiword);
      bool informative = false;
      if (usr.contains("slu")) {
        for (const auto& act : usr["slu"]) {
          const std::string name = act.value("act", "");
          informative = informative || name == "inform" || name == "request";
          for (const auto& pair : act.value("slots", ojson::array())) {
            if (pair.size() != 2) continue;
            const std::string slot = pair[0].get<std::string>();
            const std::string value = join_value(pair[1].get<std::string>());
            if (name == "inform" && schema.informable_index(slot) && schema.slot_of_value(value)) {
              state.informable[slot] = value;
            } else if (name == "request" && schema.is_requestable(value) &&
                       std::find(state.requestable.begin(), state.requestable.end(), value) ==
                           state.requestable.end()) {
              state.requestable.push_back(value);
            }
          }
        }
      }
      t.state = state;
      t.thanks_only =
          !informative && std::any_of(t.user.begin(), t.user.end(), [&](const std::string& w) {
            return std::find(thanks_keywords.begin(), thanks_keywords.end(), w) !=
                   thanks_keywords.end();
          });
      t.resp_surface =
          merge_values(tokenize(lowercase(turn.at("sys").at("sent").get<std::string>())), multiword);
      t.resp_delex = t.resp_surface;
      for (const auto& e : out.kb.entities) t.resp_delex = delexicalize(t.resp_delex, e, schema);
      session.turns.push_back(std::move(t));
    }
    if (session.turns.empty()) continue;
    const auto matches = kb_search(out.kb, session.turns.back().state->informable);
    if (!matches.empty()) session.target_entity = matches.front().id;
    out.sessions.push_back(std::move(session));
  }
  return out;
}

}  // namespace copyflow
