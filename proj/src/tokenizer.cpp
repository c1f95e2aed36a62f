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

#include "probe/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "probe/error.hpp"

namespace probe {

namespace {

constexpr std::string_view kPunct = ".,!?;:()\"";
constexpr std::string_view kNewlinePiece = "\n";
constexpr std::string_view kNewlineEscape = "<nl>";

bool is_punct(char c) { return kPunct.find(c) != std::string_view::npos; }

bool is_word_piece(std::string_view p) {
  return !p.empty() && p != kNewlinePiece && !(p.size() == 1 && is_punct(p[0]));
}

}  // namespace

Tokenizer::Tokenizer() {
  add("<unk>");
  add("<bos>");
  add("<eos>");
  add(std::string(kNewlinePiece));
}

void Tokenizer::add(std::string piece) {
  if (index_.contains(piece)) return;
  index_.emplace(piece, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(piece));
}

std::vector<std::string> Tokenizer::pieces(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char c : text) {
    if (c == '\n') {
      flush();
      out.emplace_back(kNewlinePiece);
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      word.push_back(c);
    }
  }
  flush();
  return out;
}

Tokenizer Tokenizer::build(std::span<const std::string> texts,
                           std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& p : pieces(t)) counts[std::move(p)]++;
  }
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(),
                                                           counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Tokenizer tok;
  for (auto& [piece, count] : ordered) {
    if (count >= min_count) tok.add(piece);
  }
  return tok;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& p : pieces(text)) {
    auto it = index_.find(p);
    ids.push_back(it == index_.end() ? kUnk : it->second);
  }
  return ids;
}

std::optional<int> Tokenizer::find(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string Tokenizer::decode(std::span<const int> ids,
                              std::optional<int> after) const {
  std::string out;
  bool line_start = !after || *after == kNewline || *after == kBos;
  std::string prev = after ? token(*after) : std::string();
  for (int id : ids) {
    if (id == kBos || id == kEos) continue;
    const auto& piece = token(id);
    if (piece == kNewlinePiece) {
      out += '\n';
      line_start = true;
    } else {
      const bool word = is_word_piece(piece) || piece == "(" || piece == "\"";
      if (word && !line_start && prev != "(") out += ' ';
      out += piece;
      line_start = false;
    }
    prev = piece;
  }
  return out;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& t : tokens_) {
    out << (t == kNewlinePiece ? std::string(kNewlineEscape) : t) << '\n';
  }
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open vocabulary " + path.string());
  Tokenizer tok;
  tok.tokens_.clear();
  tok.index_.clear();
  std::string line;
  while (std::getline(in, line)) {
    tok.add(line == kNewlineEscape ? std::string(kNewlinePiece) : line);
  }
  if (tok.size() < 4 || tok.token(kNewline) != kNewlinePiece) {
    throw Error("malformed vocabulary " + path.string());
  }
  return tok;
}

}  // namespace probe
