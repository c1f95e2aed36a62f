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

#include "probe/synth.hpp"

#include <array>
#include <fstream>
#include <numeric>
#include <string_view>

#include "probe/error.hpp"
#include "probe/random.hpp"

namespace probe::synth {

namespace {

struct Gerund {
  std::string_view word;
  bool positive;
  std::string_view foundation;
};

constexpr std::array<Gerund, 12> kGerunds{{
    {"helping", true, "care-harm"},
    {"listening", true, "care-harm"},
    {"sharing", true, "fairness-cheating"},
    {"apologizing", true, "fairness-cheating"},
    {"thanking", true, "loyalty-betrayal"},
    {"volunteering", true, "loyalty-betrayal"},
    {"yelling", false, "care-harm"},
    {"ignoring", false, "care-harm"},
    {"stealing", false, "fairness-cheating"},
    {"cheating", false, "fairness-cheating"},
    {"gossiping", false, "loyalty-betrayal"},
    {"lying", false, "loyalty-betrayal"},
}};

constexpr std::array<std::string_view, 8> kOpeners{
    "Dealing with", "Talking to", "Meeting", "Visiting",
    "Calling", "Working with", "Arguing with", "Texting"};

constexpr std::array<std::string_view, 10> kPeople{
    "my coworker", "my neighbor", "my sister", "my boss", "a stranger",
    "my friend", "my landlord", "my teacher", "my roommate", "my cousin"};

constexpr std::array<std::string_view, 6> kPlaces{
    "at work", "at home", "at school", "at the park", "online", "at dinner"};

constexpr std::array<std::string_view, 12> kKeywords{
    "red", "blue", "green", "amber", "violet", "silver",
    "golden", "black", "white", "pink", "brown", "gray"};

constexpr std::array<std::string_view, 24> kFiller{
    "the", "a", "river", "stone", "runs", "near", "old", "house", "quiet",
    "bird", "sings", "over", "small", "hill", "under", "bright", "sky",
    "cold", "wind", "moves", "across", "long", "road", "slowly"};

constexpr std::array<std::string_view, 8> kNouns{
    "river", "stone", "house", "bird", "hill", "sky", "wind", "road"};
constexpr std::array<std::string_view, 6> kVerbs{
    "sees", "follows", "passes", "finds", "leaves", "meets"};
constexpr std::array<std::string_view, 6> kAdjectives{
    "old", "quiet", "small", "bright", "cold", "long"};

template <class A>
std::string_view pick(const A& items, Rng& rng) {
  return items[rng.below(items.size())];
}

std::vector<LabeledText> keyword_task(std::size_t count, std::uint64_t seed,
                                      double rule_rate, std::string_view prefix) {
  Rng rng(seed);
  std::vector<LabeledText> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<std::string_view> words;
    for (int w = 0; w < 5; ++w) words.push_back(pick(kFiller, rng));
    const std::size_t key = rng.below(kKeywords.size());
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)),
                 kKeywords[key]);
    LabeledText item;
    item.id = std::string(prefix) + "-" + std::to_string(i);
    for (const auto w : words) {
      if (!item.text.empty()) item.text += ' ';
      item.text += w;
    }
    const int rule = static_cast<int>(key % 2);
    const bool follow = rng.uniform() < rule_rate;
    const int coin = static_cast<int>(rng.below(2));
    item.label = follow ? rule : coin;
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace

std::vector<SituationRecord> judgment_corpus(std::size_t count, std::uint64_t seed,
                                             std::size_t first_index) {
  const std::size_t space =
      kGerunds.size() * kOpeners.size() * kPeople.size() * kPlaces.size();
  if (first_index + count > space) {
    throw Error("judgment corpus holds at most " + std::to_string(space) + " situations");
  }
  std::vector<std::size_t> order(space);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "judgment-corpus"));
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<SituationRecord> out;
  out.reserve(count);
  for (std::size_t i = first_index; i < first_index + count; ++i) {
    std::size_t code = order[i];
    const auto& g = kGerunds[code % kGerunds.size()];
    code /= kGerunds.size();
    const auto opener = kOpeners[code % kOpeners.size()];
    code /= kOpeners.size();
    const auto person = kPeople[code % kPeople.size()];
    code /= kPeople.size();
    const auto place = kPlaces[code];

    SituationRecord r;
    r.id = "judg-" + std::to_string(i);
    r.source = Source::socialchem;
    r.situation = std::string(opener) + " " + std::string(person) + " " + std::string(place) +
                  " by " + std::string(g.word);
    r.foundation = std::string(g.foundation);
    r.rot = std::string(g.positive ? "It is good to keep " : "It is wrong to keep ") +
            std::string(g.word) + ".";
    r.judgment = g.positive ? "You should." : "You should not.";
    out.push_back(std::move(r));
  }
  return out;
}

nlohmann::json to_json(const LabeledText& item) {
  return {{"id", item.id}, {"text", item.text}, {"label", item.label}};
}

LabeledText labeled_text_from_json(const nlohmann::json& j) {
  return {j.at("id").get<std::string>(), j.at("text").get<std::string>(),
          j.at("label").get<int>()};
}

void write_labeled_jsonl(const std::filesystem::path& path,
                         std::span<const LabeledText> items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& x : items) out << to_json(x).dump() << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<LabeledText> read_labeled_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<LabeledText> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(labeled_text_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

std::vector<LabeledText> semantic_task(std::size_t count, std::uint64_t seed) {
  return keyword_task(count, derive_seed(seed, "semantic-task"), 1.0, "sem");
}

std::vector<LabeledText> pragmatic_task(std::size_t count, std::uint64_t seed,
                                        double rule_rate) {
  if (rule_rate < 0.0 || rule_rate > 1.0) throw Error("rule rate outside [0, 1]");
  return keyword_task(count, derive_seed(seed, "pragmatic-task"), rule_rate, "prag");
}

std::string label_word(int label) { return label == 0 ? "negative" : "positive"; }

std::string task_prompt(const LabeledText& item) {
  return "Text: " + item.text + "\nLabel:";
}

std::string task_target(const LabeledText& item) { return " " + label_word(item.label); }

std::vector<std::string> general_corpus(std::size_t sentences, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "general-corpus"));
  std::vector<std::string> out;
  out.reserve(sentences);
  for (std::size_t i = 0; i < sentences; ++i) {
    std::string s = "the ";
    if (rng.bernoulli(0.5)) s += std::string(pick(kAdjectives, rng)) + " ";
    if (rng.bernoulli(0.3)) s += std::string(pick(kKeywords, rng)) + " ";
    s += std::string(pick(kNouns, rng)) + " " + std::string(pick(kVerbs, rng)) + " the ";
    if (rng.bernoulli(0.3)) s += std::string(pick(kKeywords, rng)) + " ";
    s += std::string(pick(kNouns, rng)) + " .";
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace probe::synth
