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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace probe {

enum class Source { socialchem, mic, sentiment };
enum class Field { situation, foundation, rot, judgment };

std::string_view to_string(Source s);
Source parse_source(std::string_view name);
std::string_view to_string(Field f);

// One annotated moral case. Text fields are whitespace-normalized on ingest:
// single line, no leading or trailing blanks.
struct SituationRecord {
  std::string id;
  std::string situation;
  std::string foundation;
  std::string rot;
  std::string judgment;
  Source source = Source::socialchem;

  const std::string& field(Field f) const;
  std::string& field(Field f);

  friend bool operator==(const SituationRecord&, const SituationRecord&) = default;
};

nlohmann::json to_json(const SituationRecord& r);
SituationRecord record_from_json(const nlohmann::json& j);

enum class StrategyName {
  rot,
  moral_rot,
  judg,
  moral_judg,
  rot_judg,
  moral_rot_judg,
  classify
};

// Which record fields condition the model and which it must produce, in
// emission order.
struct PromptStrategy {
  StrategyName name;
  std::vector<Field> input_fields;
  std::vector<Field> target_fields;

  static PromptStrategy of(StrategyName name);
  static PromptStrategy parse(std::string_view name);
  std::string_view label() const;
  Field final_target() const { return target_fields.back(); }
};

std::span<const StrategyName> all_strategies();

enum class InputFormat { tsv, csv, jsonl };
InputFormat parse_format(std::string_view tag);

struct LoadOptions {
  Source source = Source::socialchem;
  // Reject rows whose foundation is not in the source's declared label set.
  bool validate_labels = true;
  // MIC-style files carry prompt/reply columns instead of a situation; the
  // pair is joined with this string.
  std::string mic_joiner = " ";
};

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t skipped = 0;
  std::vector<std::string> issues;  // one entry per skipped row
};

struct LoadResult {
  std::vector<SituationRecord> records;
  LoadReport report;
};

// Reads TSV/CSV (header row required) or JSONL. Malformed rows are skipped
// and reported; throws when the file is missing or nothing parses.
LoadResult load_records(const std::filesystem::path& path, InputFormat format,
                        const LoadOptions& options = {});

// The declared foundation labels of a source, canonical spelling.
std::span<const std::string_view> declared_labels(Source source);

// Lower-cased canonical label, or nullopt if the label is not declared for
// the source. SocialChem pair labels also accept either half ("Fairness"
// matches "fairness-cheating"); a trailing period is ignored.
std::optional<std::string> canonical_label(std::string_view label,
                                           Source source);

// Case- and punctuation-insensitive foundation comparison.
bool same_label(std::string_view a, std::string_view b);

constexpr char kFoundationDelimiter = '|';

std::vector<SituationRecord> filter_single_foundation(
    std::span<const SituationRecord> records);

enum class BinaryScheme { mic, socialchem };
BinaryScheme parse_binary_scheme(std::string_view name);
std::span<const std::string_view> scheme_labels(BinaryScheme scheme);
// Throws LabelError for labels outside the scheme.
int binarize_foundation(const SituationRecord& record, BinaryScheme scheme);
int binarize_label(std::string_view label, BinaryScheme scheme);

struct SplitSpec {
  std::size_t train_size = 0;
  std::size_t dev_size = 0;
  std::size_t test_size = 0;
  std::uint64_t seed = 1;
  bool single_foundation_only = true;
};

struct Splits {
  std::vector<SituationRecord> train;
  std::vector<SituationRecord> dev;
  std::vector<SituationRecord> test;
};

Splits make_splits(std::span<const SituationRecord> records,
                   const SplitSpec& spec);

enum class RenderStage { train, inference_prefix };

std::string_view field_header(Field f);

std::string render_prompt(const SituationRecord& record,
                          const PromptStrategy& strategy, RenderStage stage);

// The train rendering with the inference prefix removed: what the model is
// asked to produce.
std::string render_target_portion(const SituationRecord& record,
                                  const PromptStrategy& strategy);

struct ParsedGeneration {
  std::map<Field, std::string> fields;  // every target field, possibly empty
  std::vector<Field> missing;           // target fields with no content
  bool complete() const { return missing.empty(); }
};

ParsedGeneration parse_generation(std::string_view text,
                                  const PromptStrategy& strategy);

// Canonical JSONL snapshot of a record list.
void write_records_jsonl(const std::filesystem::path& path,
                         std::span<const SituationRecord> records);
std::vector<SituationRecord> read_records_jsonl(
    const std::filesystem::path& path);

std::string normalize_whitespace(std::string_view text);

}  // namespace probe
