// Copyright 2026 The Probe Authors.
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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace probe {

// Word-level tokenizer for the reference models.
//
// Text is split into pieces: runs of word characters (anything that is not
// whitespace or one of the punctuation marks below), single punctuation
// marks, and newlines. Case is preserved. Decoding re-inserts single spaces
// between words, so canonical prompt text round-trips exactly.
class Tokenizer {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kNewline = 3;

  Tokenizer();

  // Vocabulary: the four specials, then pieces ordered by descending
  // frequency with ties broken lexicographically.
  static Tokenizer build(std::span<const std::string> texts,
                         std::size_t min_count = 1);

  static std::vector<std::string> pieces(std::string_view text);

  // No BOS/EOS is added.
  std::vector<int> encode(std::string_view text) const;

  // `after` is the token that precedes `ids` in the full sequence, if any;
  // it decides whether the first word gets a leading space.
  std::string decode(std::span<const int> ids,
                     std::optional<int> after = std::nullopt) const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(std::string_view piece) const;

  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

 private:
  void add(std::string piece);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace probe
