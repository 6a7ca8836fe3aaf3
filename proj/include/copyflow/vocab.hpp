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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace copyflow {

/// Token inventory. Reserved tokens occupy the fixed indices below; the rest
/// are sorted so a vocabulary built from the same token set is identical.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kGo = 2;
  static constexpr int kEosUtterance = 3;
  static constexpr int kEosSpan = 4;
  static constexpr int kSpanDelim = 5;
  static constexpr int kReservedCount = 6;

  static const std::vector<std::string>& reserved_tokens();

  Vocabulary();
  /// `tokens` must begin with the reserved tokens in order and be unique.
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Reserved tokens followed by the sorted, de-duplicated `words`.
  static Vocabulary build(std::span<const std::string> words);

  std::size_t size() const { return tokens_.size(); }
  /// Index of `token`, or kUnk when absent.
  int index(std::string_view token) const;
  std::optional<int> find(std::string_view token) const;
  const std::string& token(int index) const;
  bool is_reserved(int index) const { return index >= 0 && index < kReservedCount; }

  std::vector<int> encode(std::span<const std::string> words) const;
  std::vector<std::string> decode(std::span<const int> indices) const;

  const std::vector<std::string>& tokens() const { return tokens_; }
  /// FNV-1a over the token list; identifies a vocabulary in checkpoints.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace copyflow
