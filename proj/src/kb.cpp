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
#include <sstream>

#include "copyflow/corpus.hpp"
#include "copyflow/errors.hpp"

namespace copyflow {
namespace {

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

}  // namespace

std::vector<Entity> kb_search(const KnowledgeBase& kb, const Constraints& constraints) {
  for (const auto& [slot, value] : constraints) {
    if (!kb.schema.informable_index(slot)) {
      throw ContractError("kb_search: slot '" + slot + "' is not informable in the schema");
    }
  }
  std::vector<Entity> out;
  for (const auto& e : kb.entities) {
    bool ok = true;
    for (const auto& [slot, value] : constraints) {
      auto it = e.attributes.find(slot);
      if (it == e.attributes.end() || it->second != value) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(e);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Entity& a, const Entity& b) { return a.id < b.id; });
  return out;
}

std::vector<std::string> delexicalize(std::span<const std::string> surface, const Entity& entity,
                                      const SlotSchema& schema) {
  struct Pattern {
    std::vector<std::string> tokens;
    std::string placeholder;
  };
  std::vector<Pattern> patterns;
  auto add = [&](const std::string& attr) {
    auto it = entity.attributes.find(attr);
    if (it == entity.attributes.end()) return;
    auto toks = words(it->second);
    if (!toks.empty()) patterns.push_back({std::move(toks), SlotSchema::placeholder(attr)});
  };
  add(schema.name_attribute);
  for (const auto& r : schema.requestable) add(r);
  std::stable_sort(patterns.begin(), patterns.end(), [](const Pattern& a, const Pattern& b) {
    return a.tokens.size() > b.tokens.size();
  });

  std::vector<std::string> out;
  for (std::size_t i = 0; i < surface.size();) {
    const Pattern* hit = nullptr;
    for (const auto& p : patterns) {
      if (i + p.tokens.size() <= surface.size() &&
          std::equal(p.tokens.begin(), p.tokens.end(), surface.begin() + static_cast<long>(i))) {
        hit = &p;
        break;
      }
    }
    if (hit) {
      out.push_back(hit->placeholder);
      i += hit->tokens.size();
    } else {
      out.push_back(surface[i++]);
    }
  }
  return out;
}

std::vector<std::string> lexicalize(std::span<const std::string> delex, const Entity& entity,
                                    const SlotSchema& schema) {
  std::vector<std::pair<std::string, std::string>> fill;
  auto add = [&](const std::string& attr) {
    auto it = entity.attributes.find(attr);
    if (it != entity.attributes.end()) fill.emplace_back(SlotSchema::placeholder(attr), it->second);
  };
  add(schema.name_attribute);
  for (const auto& r : schema.requestable) add(r);

  std::vector<std::string> out;
  for (const auto& tok : delex) {
    auto it = std::find_if(fill.begin(), fill.end(), [&](const auto& f) { return f.first == tok; });
    if (it == fill.end()) {
      out.push_back(tok);
      continue;
    }
    for (auto& w : words(it->second)) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace copyflow
