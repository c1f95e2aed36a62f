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

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "probe/corpus.hpp"

// Deterministic synthetic corpora for desk-scale experiments. Every
// generator is a pure function of its arguments.

namespace probe::synth {

// Moral situations whose judgment is fixed by the closing gerund, e.g.
// "Dealing with my coworker at work by lying" -> "You should not.". The
// foundation is fixed by the gerund as well, the rule of thumb restates it.
// Ids are "judg-<index>"; no two records share a situation.
std::vector<SituationRecord> judgment_corpus(std::size_t count,
                                             std::uint64_t seed,
                                             std::size_t first_index = 0);

struct LabeledText {
  std::string id;
  std::string text;
  int label = 0;
};

nlohmann::json to_json(const LabeledText& item);
LabeledText labeled_text_from_json(const nlohmann::json& j);
void write_labeled_jsonl(const std::filesystem::path& path,
                         std::span<const LabeledText> items);
// Throws on a missing file or a malformed line.
std::vector<LabeledText> read_labeled_jsonl(const std::filesystem::path& path);

// Binary task whose label is a surface property: the parity of the index of
// the one keyword in the text.
std::vector<LabeledText> semantic_task(std::size_t count, std::uint64_t seed);

// Binary task whose label follows the same surface rule only with
// probability `rule_rate`, and is a fair coin otherwise. No classifier can
// beat rule_rate + (1 - rule_rate) / 2 in expectation.
std::vector<LabeledText> pragmatic_task(std::size_t count, std::uint64_t seed,
                                        double rule_rate = 0.4);

// Words naming each label in generative renderings of the tasks.
std::string label_word(int label);

// "Text: <text>\nLabel:" and " <label word>".
std::string task_prompt(const LabeledText& item);
std::string task_target(const LabeledText& item);

// Short general-domain sentences over the same vocabulary, one per entry.
std::vector<std::string> general_corpus(std::size_t sentences,
                                        std::uint64_t seed);

}  // namespace probe::synth
