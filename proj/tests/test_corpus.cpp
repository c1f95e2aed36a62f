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

#include <algorithm>
#include <filesystem>
#include <set>

#include "probe/corpus.hpp"
#include "probe/error.hpp"
#include "probe/random.hpp"

using namespace probe;

namespace {

const std::filesystem::path kData = PROBE_TEST_DATA_DIR;

SituationRecord table_one() {
  return {"t1",
          "Reminding my coworker who crashed into my car to pay to get it repaired.",
          "Fairness",
          "If you crash into someone's car, you should pay for their repairs.",
          "You should.",
          Source::socialchem};
}

SituationRecord with_foundation(std::string id, std::string foundation) {
  SituationRecord r;
  r.id = std::move(id);
  r.situation = "Something happened.";
  r.foundation = std::move(foundation);
  return r;
}

}  // namespace

TEST_CASE("socialchem TSV: well-formed rows load, blank situation is skipped") {
  const auto res = load_records(kData / "socialchem.tsv", InputFormat::tsv);
  CHECK(res.report.loaded == 4);
  CHECK(res.report.skipped == 1);
  REQUIRE(res.records.size() == 4);
  const auto& r = res.records[0];
  CHECK(r.id == "sc-1");
  CHECK(r.situation == table_one().situation);
  CHECK(r.foundation == "Fairness");
  CHECK(r.rot == table_one().rot);
  CHECK(r.judgment == "You should.");
  CHECK(res.records[2].situation == "Telling my sister her drawing is ugly.");
}

TEST_CASE("MIC CSV joins prompt and reply with the configured joiner") {
  LoadOptions opt;
  opt.source = Source::mic;
  opt.mic_joiner = " || ";
  const auto res = load_records(kData / "mic.csv", InputFormat::csv, opt);
  CHECK(res.report.loaded == 3);
  CHECK(res.report.skipped == 1);
  CHECK(res.records[0].situation == "Is it ok to lie to my boss? || No, honesty matters at work.");
  CHECK(res.records[2].foundation == "Liberty");
}

TEST_CASE("sentiment JSONL keeps labels, drops rot and judgment, skips bad lines") {
  LoadOptions opt;
  opt.source = Source::sentiment;
  const auto res = load_records(kData / "sentiment.jsonl", InputFormat::jsonl, opt);
  CHECK(res.report.loaded == 2);
  CHECK(res.report.skipped == 1);
  CHECK(res.records[1].rot.empty());
  CHECK(canonical_label(res.records[0].foundation, Source::sentiment) == "positive");
}

TEST_CASE("loading errors: missing file and unknown format") {
  CHECK_THROWS_AS(load_records(kData / "absent.tsv", InputFormat::tsv), Error);
  CHECK_THROWS_AS(parse_format("xlsx"), Error);
}

TEST_CASE("filter_single_foundation on the fixture: 5 records, 2 multi-foundation") {
  const auto res = load_records(kData / "multi.tsv", InputFormat::tsv);
  REQUIRE(res.records.size() == 5);
  const auto kept = filter_single_foundation(res.records);
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].id == "m-1");
  CHECK(kept[1].id == "m-3");
  CHECK(kept[2].id == "m-5");
  const std::vector<SituationRecord> single{with_foundation("a", "Fairness")};
  CHECK(filter_single_foundation(single).size() == 1);
  const std::vector<SituationRecord> multi{with_foundation("a", "Fairness|Care")};
  CHECK(filter_single_foundation(multi).empty());
}

TEST_CASE("binarization follows the two schemes") {
  CHECK(binarize_label("Care", BinaryScheme::mic) == 0);
  for (auto l : {"Fairness", "Liberty", "Authority", "Loyalty"}) {
    CHECK(binarize_label(l, BinaryScheme::mic) == 1);
  }
  CHECK(binarize_label("Loyalty-Betrayal", BinaryScheme::socialchem) == 0);
  CHECK(binarize_label("Sanctity-Degradation", BinaryScheme::socialchem) == 1);
  CHECK(binarize_label("Fairness-Cheating", BinaryScheme::socialchem) == 1);
  CHECK(binarize_label("care-harm", BinaryScheme::socialchem) == 1);
  CHECK(binarize_label("authority-subversion.", BinaryScheme::socialchem) == 1);
  try {
    binarize_label("Sanctity", BinaryScheme::mic);
    FAIL("expected a labeling error");
  } catch (const LabelError& e) {
    CHECK(e.label() == "Sanctity");
  }
  CHECK_THROWS_AS(binarize_label("Honesty", BinaryScheme::socialchem), LabelError);
}

TEST_CASE("binarization partitions every scheme into two non-empty classes") {
  for (auto scheme : {BinaryScheme::mic, BinaryScheme::socialchem}) {
    std::set<int> classes;
    for (auto l : scheme_labels(scheme)) classes.insert(binarize_label(l, scheme));
    CHECK(classes == std::set<int>{0, 1});
  }
}

TEST_CASE("make_splits: disjoint cover, deterministic, storage-order independent") {
  std::vector<SituationRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back(with_foundation("r" + std::to_string(i), "care"));
  const SplitSpec spec{6, 2, 2, 1, true};
  const auto a = make_splits(recs, spec);
  const auto b = make_splits(recs, spec);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  std::set<std::string> ids;
  for (const auto* part : {&a.train, &a.dev, &a.test}) {
    for (const auto& r : *part) ids.insert(r.id);
  }
  CHECK(ids.size() == 10);
  std::reverse(recs.begin(), recs.end());
  CHECK(make_splits(recs, spec).train == a.train);
  CHECK(make_splits(recs, {6, 2, 2, 2, true}).train != a.train);
  CHECK_THROWS_AS(make_splits(recs, {9, 1, 1, 1, true}), Error);
}

TEST_CASE("make_splits draws exactly the requested train size from a large pool") {
  std::vector<SituationRecord> recs;
  for (int i = 0; i < 20000; ++i) recs.push_back(with_foundation("r" + std::to_string(i), "care"));
  const auto s = make_splits(recs, {7500, 1000, 1000, 3, true});
  CHECK(s.train.size() == 7500);
}

TEST_CASE("render_prompt emits the header line format") {
  const auto rec = table_one();
  const auto judg = PromptStrategy::of(StrategyName::judg);
  CHECK(render_prompt(rec, judg, RenderStage::train) ==
        "Situation: Reminding my coworker who crashed into my car to pay to get it repaired.\n"
        "Ethical Judgment: You should.");
  CHECK(render_prompt(rec, judg, RenderStage::inference_prefix) ==
        "Situation: Reminding my coworker who crashed into my car to pay to get it repaired.\n"
        "Ethical Judgment:");
  const auto mr = render_prompt(rec, PromptStrategy::of(StrategyName::moral_rot), RenderStage::train);
  CHECK(mr.find("\nMoral Foundation: Fairness\nRule of Thumb: If you crash") != std::string::npos);
  auto missing = rec;
  missing.rot.clear();
  CHECK_THROWS_AS(render_prompt(missing, PromptStrategy::of(StrategyName::rot), RenderStage::train), Error);
  CHECK_NOTHROW(render_prompt(missing, PromptStrategy::of(StrategyName::rot), RenderStage::inference_prefix));
}

TEST_CASE("strategy targets") {
  CHECK(PromptStrategy::of(StrategyName::moral_rot).target_fields ==
        std::vector<Field>{Field::foundation, Field::rot});
  CHECK(PromptStrategy::of(StrategyName::judg).target_fields == std::vector<Field>{Field::judgment});
  CHECK(PromptStrategy::of(StrategyName::moral_rot_judg).target_fields ==
        std::vector<Field>{Field::foundation, Field::rot, Field::judgment});
  for (auto name : all_strategies()) {
    const auto s = PromptStrategy::of(name);
    CHECK_FALSE(s.target_fields.empty());
    for (auto f : s.target_fields) {
      CHECK(std::find(s.input_fields.begin(), s.input_fields.end(), f) == s.input_fields.end());
    }
    CHECK(PromptStrategy::parse(s.label()).name == name);
  }
}

TEST_CASE("parse_generation: header split, empty text, out-of-order headers") {
  const auto mr = PromptStrategy::of(StrategyName::moral_rot);
  auto p = parse_generation("Fairness\nRule of Thumb: Pay for damage you cause.", mr);
  CHECK(p.complete());
  CHECK(p.fields[Field::foundation] == "Fairness");
  CHECK(p.fields[Field::rot] == "Pay for damage you cause.");

  p = parse_generation("", mr);
  CHECK(p.fields[Field::foundation].empty());
  CHECK(p.fields[Field::rot].empty());
  CHECK(p.missing == std::vector<Field>{Field::foundation, Field::rot});

  // Hand split: the judgment line comes first, then the foundation header.
  const auto mrj = PromptStrategy::of(StrategyName::moral_rot_judg);
  p = parse_generation(
      "\nEthical Judgment: You should.\nRule of Thumb: Help friends.\nMoral Foundation: Care", mrj);
  CHECK(p.fields[Field::judgment] == "You should.");
  CHECK(p.fields[Field::rot] == "Help friends.");
  CHECK(p.fields[Field::foundation] == "Care");
  CHECK(p.complete());
}

TEST_CASE("property: prefix is a strict prefix and the target portion round-trips") {
  probe::Rng rng(4);
  const std::vector<std::string> words{"helping", "my", "friend", "lying", "to", "a", "boss", "again"};
  auto sentence = [&] {
    std::string s;
    const auto n = 1 + rng.below(6);
    for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + words[rng.below(words.size())];
    return s + ".";
  };
  for (int trial = 0; trial < 200; ++trial) {
    SituationRecord r{"x", sentence(), "Care", sentence(), sentence(), Source::socialchem};
    for (auto name : all_strategies()) {
      const auto s = PromptStrategy::of(name);
      const auto full = render_prompt(r, s, RenderStage::train);
      const auto prefix = render_prompt(r, s, RenderStage::inference_prefix);
      CHECK(prefix.size() < full.size());
      CHECK(full.compare(0, prefix.size(), prefix) == 0);
      const auto parsed = parse_generation(render_target_portion(r, s), s);
      for (auto f : s.target_fields) CHECK(parsed.fields.at(f) == r.field(f));
    }
  }
}

TEST_CASE("JSONL snapshot round trip") {
  const auto res = load_records(kData / "socialchem.tsv", InputFormat::tsv);
  const auto path = std::filesystem::temp_directory_path() / "probe_records_test.jsonl";
  write_records_jsonl(path, res.records);
  CHECK(read_records_jsonl(path) == res.records);
  std::filesystem::remove(path);
}
