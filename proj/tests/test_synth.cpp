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

#include <doctest.h>

#include <set>
#include <string>

#include "probe/error.hpp"
#include "probe/synth.hpp"

namespace synth = probe::synth;

TEST_CASE("judgment corpus is deterministic, unique and gerund-labelled") {
  const auto a = synth::judgment_corpus(300, 4);
  const auto b = synth::judgment_corpus(300, 4);
  CHECK(a == b);
  CHECK(a != synth::judgment_corpus(300, 5));
  std::set<std::string> ids, situations;
  for (const auto& r : a) {
    ids.insert(r.id);
    situations.insert(r.situation);
    const bool negative = r.judgment == "You should not.";
    CHECK((negative || r.judgment == "You should."));
    CHECK(r.rot.starts_with(negative ? "It is wrong" : "It is good"));
    const auto gerund = r.situation.substr(r.situation.rfind(' ') + 1);
    CHECK(r.rot.find(gerund) != std::string::npos);
    CHECK(!r.foundation.empty());
  }
  CHECK(ids.size() == a.size());
  CHECK(situations.size() == a.size());
}

TEST_CASE("judgment corpus windows are disjoint slices of one order") {
  const auto whole = synth::judgment_corpus(60, 2);
  const auto tail = synth::judgment_corpus(20, 2, 40);
  for (std::size_t i = 0; i < tail.size(); ++i) CHECK(tail[i] == whole[40 + i]);
  CHECK(tail.front().id == "judg-40");
  CHECK_THROWS_AS(synth::judgment_corpus(10, 1, 5760), probe::Error);
  CHECK_NOTHROW(synth::judgment_corpus(1, 1, 5759));
}

TEST_CASE("semantic labels follow the keyword rule and pragmatic ones mostly do not") {
  const char* even[] = {"red", "green", "violet", "golden", "white", "brown"};
  auto rule = [&](const std::string& text) {
    for (const char* w : even) {
      if ((" " + text + " ").find(std::string(" ") + w + " ") != std::string::npos) return 0;
    }
    return 1;
  };
  for (const auto& x : synth::semantic_task(500, 3)) CHECK(x.label == rule(x.text));
  const auto prag = synth::pragmatic_task(4000, 3);
  std::size_t agree = 0;
  for (const auto& x : prag) agree += x.label == rule(x.text);
  const double rate = static_cast<double>(agree) / prag.size();
  CHECK(rate == doctest::Approx(0.7).epsilon(0.05));
  for (const auto& x : synth::pragmatic_task(200, 3, 1.0)) CHECK(x.label == rule(x.text));
  CHECK_THROWS_AS(synth::pragmatic_task(1, 1, 1.5), probe::Error);
}

TEST_CASE("task renderings and general corpus") {
  synth::LabeledText x{"sem-0", "the red stone", 1};
  CHECK(synth::task_prompt(x) == "Text: the red stone\nLabel:");
  CHECK(synth::task_target(x) == " positive");
  CHECK(synth::label_word(0) == "negative");
  const auto g = synth::general_corpus(50, 8);
  CHECK(g == synth::general_corpus(50, 8));
  for (const auto& s : g) {
    CHECK(s.starts_with("the "));
    CHECK(s.ends_with(" ."));
  }
}
