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
#include <cstdio>
#include <limits>
#include <random>
#include <set>

#include "copyflow/corpus.hpp"
#include "copyflow/errors.hpp"

namespace copyflow {
namespace {

using Rng = std::mt19937_64;

// Merged user turns stay within the default encoder length when possible.
constexpr std::size_t kMaxUserWords = 16;

const std::vector<std::string> kFood = {
    "chinese",  "italian",    "indian",     "thai",      "french",  "spanish",    "greek",
    "turkish",  "korean",     "japanese",   "mexican",   "british", "lebanese",   "vietnamese",
    "portuguese", "african",  "european",   "asian",     "seafood", "vegetarian"};
const std::vector<std::string> kArea = {
    "north",    "south",    "east",      "west",     "centre",   "riverside", "harbour",
    "downtown", "uptown",   "midtown",   "suburbs",  "docklands", "oldtown", "parkside",
    "hilltop",  "lakeside", "airport",   "university", "market", "castle"};
const std::vector<std::string> kPrice = {
    "cheap",     "moderate", "expensive",   "budget",   "affordable", "luxury",  "premium",
    "upscale",   "bargain",  "economical",  "pricey",   "midrange",   "lavish",  "thrifty",
    "discount",  "fancy",    "modest",      "posh",     "exclusive",  "inexpensive"};

const std::vector<std::string> kNameFirst = {"golden", "royal",  "little", "red",   "blue",
                                             "happy",  "silver", "green",  "lucky", "old",
                                             "grand",  "jade"};
const std::vector<std::string> kNameSecond = {"dragon", "garden", "house",  "kitchen", "palace",
                                              "table",  "lantern", "oven",  "spoon",   "bistro",
                                              "tavern", "corner"};
const std::vector<std::string> kStreets = {"mill", "regent", "king", "station", "bridge",
                                           "market", "hills", "park"};
const std::vector<std::string> kStreetKinds = {"road", "street", "lane"};

struct SlotInfo {
  std::string name;
  std::string label;  // how the system asks for it
  std::vector<std::string> values;
};

std::string phrase(const std::string& slot, const std::string& value) {
  if (slot == "food") return value + " food";
  if (slot == "area") return value + " area";
  if (slot == "pricerange") return value + " price range";
  return "with " + slot + " " + value;
}

std::vector<SlotInfo> make_slots(const GeneratorConfig& c) {
  std::vector<SlotInfo> slots;
  for (std::size_t s = 0; s < c.slots; ++s) {
    SlotInfo info;
    const std::vector<std::string>* curated = nullptr;
    if (s == 0) {
      info = {"food", "type of food", {}};
      curated = &kFood;
    } else if (s == 1) {
      info = {"area", "area", {}};
      curated = &kArea;
    } else if (s == 2) {
      info = {"pricerange", "price range", {}};
      curated = &kPrice;
    } else {
      info.name = "slot" + std::to_string(s);
      info.label = info.name;
    }
    for (std::size_t j = 0; j < c.values_per_slot; ++j) {
      if (curated && j < curated->size()) {
        info.values.push_back((*curated)[j]);
      } else {
        info.values.push_back(info.name + "_v" + std::to_string(j));
      }
    }
    slots.push_back(std::move(info));
  }
  return slots;
}

template <typename T>
const T& choose(Rng& rng, const std::vector<T>& items) {
  std::uniform_int_distribution<std::size_t> d(0, items.size() - 1);
  return items[d(rng)];
}

bool coin(Rng& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

struct Templates {
  std::vector<std::string> open = {"hello i need a restaurant", "hi , i want to eat out",
                                   "i am looking for a restaurant", "can you help me find food"};
  std::vector<std::string> inform = {"i want {P}", "i am looking for {P}", "{P} please",
                                     "find me a place {P}"};
  std::vector<std::string> revise = {"actually {P} instead", "sorry , i meant {P}",
                                     "change that to {P}", "make it {P} instead"};
  std::vector<std::string> request = {"what is the {R}", "can i have the {R}", "tell me the {R}",
                                      "i need the {R}"};
  std::vector<std::string> thanks = {"thank you goodbye", "thanks , bye", "great thanks",
                                     "that is all thanks"};
  std::vector<std::string> ask = {"what {L} would you like ?", "which {L} do you prefer ?",
                                  "do you have a {L} preference ?", "any {L} in mind ?"};
  std::vector<std::string> offer = {"name_SLOT offers {P} .", "how about name_SLOT , it has {P} .",
                                    "name_SLOT matches {P} .", "i recommend name_SLOT for {P} ."};
  std::vector<std::string> answer = {"name_SLOT {A} .", "for name_SLOT the {A} .",
                                     "sure , name_SLOT {A} .", "okay , name_SLOT {A} ."};
  std::vector<std::string> nomatch = {"sorry there is no place {P} .",
                                      "nothing matches {P} , sorry .",
                                      "i found no restaurant {P} .",
                                      "no luck for {P} , try again ."};
  std::vector<std::string> welcome = {"you are welcome , goodbye .", "glad to help , bye .",
                                      "enjoy your meal , goodbye .", "have a nice day , bye ."};

  void limit(std::size_t k) {
    for (auto* list : {&open, &inform, &revise, &request, &thanks, &ask, &offer, &answer,
                       &nomatch, &welcome}) {
      list->resize(k);
    }
  }
};

std::string fill(std::string text, const std::string& key, const std::string& value) {
  const std::string marker = "{" + key + "}";
  for (auto pos = text.find(marker); pos != std::string::npos; pos = text.find(marker, pos)) {
    text.replace(pos, marker.size(), value);
    pos += value.size();
  }
  return text;
}

enum class EventKind { open, inform, revise, request, thanks };

struct Event {
  EventKind kind;
  std::vector<std::pair<std::string, std::string>> informs;  // slot, value
  std::vector<std::string> requests;
  std::string text;
};

std::string phrases(const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::string out;
  for (const auto& [slot, value] : pairs) {
    if (!out.empty()) out += " ";
    out += phrase(slot, value);
  }
  return out;
}

std::string state_phrases(const Constraints& c, const std::vector<SlotInfo>& slots) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& s : slots) {
    auto it = c.find(s.name);
    if (it != c.end()) pairs.emplace_back(s.name, it->second);
  }
  return phrases(pairs);
}

std::string request_phrase(const std::vector<std::string>& reqs) {
  std::string out;
  for (const auto& r : reqs) {
    if (!out.empty()) out += " and ";
    out += r;
  }
  return out;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const GeneratorConfig& config, std::uint64_t seed) {
  if (config.slots == 0) throw ConfigError("generator needs at least one informable slot");
  if (config.values_per_slot < 2) throw ConfigError("generator needs at least 2 values per slot");
  if (config.entities < config.values_per_slot) {
    throw ConfigError("unsatisfiable generator config: " + std::to_string(config.entities) +
                      " entities cannot cover " + std::to_string(config.values_per_slot) +
                      " values per slot");
  }
  if (config.entities > kNameFirst.size() * kNameSecond.size()) {
    throw ConfigError("generator supports at most " +
                      std::to_string(kNameFirst.size() * kNameSecond.size()) + " entities");
  }
  if (config.min_turns == 0 || config.max_turns < config.min_turns) {
    throw ConfigError("generator needs 1 <= min_turns <= max_turns");
  }
  Templates tpl;
  if (config.templates_per_act < 3 || config.templates_per_act > tpl.inform.size()) {
    throw ConfigError("templates_per_act must be between 3 and " +
                      std::to_string(tpl.inform.size()));
  }
  tpl.limit(config.templates_per_act);

  Rng rng(seed);
  const auto slots = make_slots(config);
  SyntheticCorpus out;
  SlotSchema& schema = out.kb.schema;
  for (const auto& s : slots) schema.informable.push_back({s.name, s.values});
  schema.requestable = {"phone", "address", "postcode"};
  schema.validate();

  // Knowledge base: every value of every slot is held by at least one entity.
  std::vector<std::vector<std::size_t>> cover(slots.size());
  for (std::size_t s = 0; s < slots.size(); ++s) {
    cover[s].resize(config.values_per_slot);
    for (std::size_t j = 0; j < cover[s].size(); ++j) cover[s][j] = j;
    std::shuffle(cover[s].begin(), cover[s].end(), rng);
  }
  std::vector<std::size_t> names(kNameFirst.size() * kNameSecond.size());
  for (std::size_t i = 0; i < names.size(); ++i) names[i] = i;
  std::shuffle(names.begin(), names.end(), rng);
  std::set<std::string> phones;
  for (std::size_t e = 0; e < config.entities; ++e) {
    Entity ent;
    char id[32];
    std::snprintf(id, sizeof(id), "e%03zu", e);
    ent.id = id;
    ent.attributes["name"] =
        kNameFirst[names[e] / kNameSecond.size()] + " " + kNameSecond[names[e] % kNameSecond.size()];
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const std::size_t v = e < config.values_per_slot ? cover[s][e]
                                                       : uniform(rng, 0, config.values_per_slot - 1);
      ent.attributes[slots[s].name] = slots[s].values[v];
    }
    std::string phone;
    do {
      phone = "01223-" + std::to_string(uniform(rng, 100000, 999999));
    } while (!phones.insert(phone).second);
    ent.attributes["phone"] = phone;
    ent.attributes["address"] = std::to_string(uniform(rng, 1, 99)) + " " + choose(rng, kStreets) +
                                " " + choose(rng, kStreetKinds);
    ent.attributes["postcode"] = "cb" + std::to_string(uniform(rng, 1, 5)) + " " +
                                 std::to_string(uniform(rng, 1, 9)) +
                                 static_cast<char>('a' + uniform(rng, 0, 25)) +
                                 static_cast<char>('a' + uniform(rng, 0, 25));
    out.kb.entities.push_back(std::move(ent));
  }

  for (std::size_t n = 0; n < config.sessions; ++n) {
    DialogueSession session;
    char sid[32];
    std::snprintf(sid, sizeof(sid), "s%04zu", n);
    session.id = sid;

    // Goal: a subset of one entity's informable values.
    const Entity& goal = choose(rng, out.kb.entities);
    std::vector<std::size_t> order(slots.size());
    for (std::size_t s = 0; s < order.size(); ++s) order[s] = s;
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_constraints =
        slots.size() == 1 || coin(rng, 0.6) ? slots.size() : uniform(rng, 1, slots.size() - 1);
    order.resize(n_constraints);

    std::vector<Event> events;
    for (std::size_t i = 0; i < order.size();) {
      const std::size_t chunk = std::min<std::size_t>(uniform(rng, 1, 2), order.size() - i);
      Event ev{EventKind::inform, {}, {}, {}};
      for (std::size_t k = 0; k < chunk; ++k, ++i) {
        const auto& s = slots[order[i]];
        ev.informs.emplace_back(s.name, goal.attributes.at(s.name));
      }
      events.push_back(std::move(ev));
    }
    if (coin(rng, config.revision_prob)) {
      // The first mention of one slot is wrong and later corrected.
      const std::size_t target = uniform(rng, 0, events.size() - 1);
      auto& pair = events[target].informs[uniform(rng, 0, events[target].informs.size() - 1)];
      const auto& values = slots[*schema.informable_index(pair.first)].values;
      std::string wrong;
      do {
        wrong = choose(rng, values);
      } while (wrong == pair.second);
      Event fix{EventKind::revise, {pair}, {}, {}};
      pair.second = wrong;
      events.insert(events.begin() + static_cast<long>(target) + 1, std::move(fix));
    }
    if (coin(rng, config.request_prob)) {
      std::vector<std::string> reqs = schema.requestable;
      std::shuffle(reqs.begin(), reqs.end(), rng);
      reqs.resize(uniform(rng, 1, 2));
      std::sort(reqs.begin(), reqs.end(), [&](const std::string& a, const std::string& b) {
        return std::find(schema.requestable.begin(), schema.requestable.end(), a) <
               std::find(schema.requestable.begin(), schema.requestable.end(), b);
      });
      events.push_back({EventKind::request, {}, reqs, {}});
    }
    if (coin(rng, config.thanks_prob)) events.push_back({EventKind::thanks, {}, {}, {}});
    const std::size_t want_turns = uniform(rng, config.min_turns, config.max_turns);
    while (events.size() < want_turns) {
      events.insert(events.begin(), Event{EventKind::open, {}, {}, {}});
    }

    for (auto& ev : events) {
      switch (ev.kind) {
        case EventKind::open:
          ev.text = choose(rng, tpl.open);
          break;
        case EventKind::inform:
          ev.text = fill(choose(rng, tpl.inform), "P", phrases(ev.informs));
          break;
        case EventKind::revise:
          ev.text = fill(choose(rng, tpl.revise), "P", phrases(ev.informs));
          break;
        case EventKind::request:
          ev.text = fill(choose(rng, tpl.request), "R", request_phrase(ev.requests));
          break;
        case EventKind::thanks:
          ev.text = choose(rng, tpl.thanks);
          break;
      }
    }

    // Group consecutive events into turns, merging the shortest neighbours
    // until the turn budget is met. Thanks always stays a turn of its own.
    std::vector<std::vector<Event>> turns;
    for (auto& ev : events) turns.push_back({std::move(ev)});
    auto words_in = [](const std::vector<Event>& group) {
      std::size_t n = 0;
      for (const auto& ev : group) n += tokenize(ev.text).size();
      return n;
    };
    auto merge_until = [&](std::size_t limit, std::size_t max_words) {
      while (turns.size() > limit) {
        std::size_t best = turns.size();
        std::size_t best_len = 0;
        for (std::size_t i = 0; i + 1 < turns.size(); ++i) {
          if (turns[i + 1].front().kind == EventKind::thanks) continue;
          const std::size_t len = words_in(turns[i]) + words_in(turns[i + 1]) + 1;
          if (len > max_words) continue;
          if (best == turns.size() || len < best_len) {
            best = i;
            best_len = len;
          }
        }
        if (best == turns.size()) return;
        for (auto& ev : turns[best + 1]) turns[best].push_back(std::move(ev));
        turns.erase(turns.begin() + static_cast<long>(best) + 1);
      }
    };
    merge_until(want_turns, kMaxUserWords);
    merge_until(config.max_turns, std::numeric_limits<std::size_t>::max());

    // Walk the turns, tracking state and realising system acts.
    std::set<std::string> pending;
    for (const auto& group : turns)
      for (const auto& ev : group)
        if (ev.kind == EventKind::inform)
          for (const auto& p : ev.informs) pending.insert(p.first);
    StateAnnotation state;
    for (std::size_t t = 0; t < turns.size(); ++t) {
      Turn turn;
      std::string user;
      std::vector<std::string> requested_now;
      bool thanks_turn = true;
      for (const auto& ev : turns[t]) {
        if (!user.empty()) user += " and ";
        user += ev.text;
        if (ev.kind != EventKind::thanks) thanks_turn = false;
        for (const auto& [slot, value] : ev.informs) {
          state.informable[slot] = value;
          pending.erase(slot);
        }
        for (const auto& r : ev.requests) {
          requested_now.push_back(r);
          if (std::find(state.requestable.begin(), state.requestable.end(), r) ==
              state.requestable.end()) {
            state.requestable.push_back(r);
          }
        }
      }
      std::sort(state.requestable.begin(), state.requestable.end(),
                [&](const std::string& a, const std::string& b) {
                  return std::find(schema.requestable.begin(), schema.requestable.end(), a) <
                         std::find(schema.requestable.begin(), schema.requestable.end(), b);
                });
      turn.user = tokenize(user);
      turn.thanks_only = thanks_turn;
      turn.state = state;

      const auto matches = kb_search(out.kb, state.informable);
      const Entity* entity = matches.empty() ? nullptr : out.kb.find(matches.front().id);
      std::string resp;
      if (thanks_turn) {
        resp = choose(rng, tpl.welcome);
      } else if (!pending.empty()) {
        const std::string next = *std::min_element(
            pending.begin(), pending.end(), [&](const std::string& a, const std::string& b) {
              return *schema.informable_index(a) < *schema.informable_index(b);
            });
        const std::string known = state_phrases(state.informable, slots);
        resp = fill(choose(rng, tpl.ask), "L", slots[*schema.informable_index(next)].label);
        if (!known.empty()) resp = known + " , " + resp;
      } else if (entity == nullptr) {
        resp = fill(choose(rng, tpl.nomatch), "P", state_phrases(state.informable, slots));
      } else if (!requested_now.empty()) {
        std::string clauses;
        for (const auto& r : requested_now) {
          if (!clauses.empty()) clauses += " and ";
          clauses += r + " is " + SlotSchema::placeholder(r);
        }
        resp = fill(choose(rng, tpl.answer), "A", clauses);
      } else {
        resp = fill(choose(rng, tpl.offer), "P", state_phrases(state.informable, slots));
      }
      turn.resp_delex = tokenize(resp);
      turn.resp_surface = entity ? lexicalize(turn.resp_delex, *entity, schema) : turn.resp_delex;
      session.turns.push_back(std::move(turn));
    }
    const auto final_matches = kb_search(out.kb, state.informable);
    if (!final_matches.empty()) session.target_entity = final_matches.front().id;
    out.sessions.push_back(std::move(session));
  }
  return out;
}

}  // namespace copyflow
