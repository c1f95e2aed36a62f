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

#include "probe/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "probe/error.hpp"
#include "probe/log.hpp"
#include "probe/random.hpp"

namespace probe {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string strip_label(std::string_view label) {
  std::string s = normalize_whitespace(label);
  while (!s.empty() && (s.back() == '.' || s.back() == ' ')) s.pop_back();
  return lower(s);
}

constexpr std::array<std::string_view, 5> kSocialChemLabels = {
    "care-harm", "fairness-cheating", "loyalty-betrayal",
    "authority-subversion", "sanctity-degradation"};
constexpr std::array<std::string_view, 6> kMicLabels = {
    "care", "fairness", "liberty", "loyalty", "authority", "sanctity"};
constexpr std::array<std::string_view, 2> kSentimentLabels = {"negative",
                                                              "positive"};

constexpr std::array<std::string_view, 5> kMicScheme = {
    "care", "fairness", "liberty", "authority", "loyalty"};
constexpr std::array<std::string_view, 5> kSocialChemScheme = {
    "loyalty-betrayal", "fairness-cheating", "care-harm",
    "sanctity-degradation", "authority-subversion"};

std::vector<std::string> split_on(std::string_view s, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(delim, start);
    out.emplace_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// RFC 4180 reader: quoted fields may contain delimiters, doubled quotes and
// newlines. Returns false at end of input.
bool read_csv_row(std::istream& in, std::vector<std::string>& row) {
  row.clear();
  if (in.peek() == std::char_traits<char>::eof()) return false;
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (any) row.push_back(std::move(field));
  return any;
}

struct Columns {
  std::map<std::string, std::size_t> index;

  std::optional<std::string> get(const std::vector<std::string>& row,
                                 const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end() || it->second >= row.size()) return std::nullopt;
    return row[it->second];
  }
};

using RowValues = std::map<std::string, std::string>;

std::string default_id(const std::filesystem::path& path, std::size_t row) {
  std::ostringstream os;
  os << path.stem().string() << "-";
  os.width(6);
  os.fill('0');
  os << row;
  return os.str();
}

// Converts one row's raw column values into a record, or explains why not.
std::optional<std::string> build_record(const RowValues& values,
                                        const LoadOptions& options,
                                        SituationRecord& out) {
  auto value = [&](const std::string& key) -> std::string {
    auto it = values.find(key);
    return it == values.end() ? std::string{} : normalize_whitespace(it->second);
  };
  out.situation = value("situation");
  if (out.situation.empty()) {
    const auto prompt = value("prompt");
    const auto reply = value("reply");
    if (!prompt.empty() && !reply.empty()) {
      out.situation = prompt + options.mic_joiner + reply;
    }
  }
  if (out.situation.empty()) return "missing situation";
  out.id = value("id");
  out.foundation = value("foundation");
  out.source = options.source;
  if (options.source != Source::sentiment) {
    out.rot = value("rot");
    out.judgment = value("judgment");
  }
  if (options.validate_labels && !out.foundation.empty()) {
    for (const auto& part : split_on(out.foundation, kFoundationDelimiter)) {
      if (!canonical_label(part, options.source)) {
        return "undeclared foundation label '" + part + "'";
      }
    }
  }
  return std::nullopt;
}

void accept_row(const RowValues& values, std::size_t row,
                const std::filesystem::path& path, const LoadOptions& options,
                std::set<std::string>& seen, LoadResult& result) {
  SituationRecord rec;
  if (auto problem = build_record(values, options, rec)) {
    result.report.skipped++;
    result.report.issues.push_back("row " + std::to_string(row) + ": " +
                                   *problem);
    return;
  }
  if (rec.id.empty()) rec.id = default_id(path, row);
  if (!seen.insert(rec.id).second) {
    result.report.skipped++;
    result.report.issues.push_back("row " + std::to_string(row) +
                                   ": duplicate id '" + rec.id + "'");
    return;
  }
  result.records.push_back(std::move(rec));
  result.report.loaded++;
}

Columns header_columns(const std::vector<std::string>& header) {
  Columns cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    cols.index[lower(normalize_whitespace(header[i]))] = i;
  }
  return cols;
}

RowValues row_values(const Columns& cols, const std::vector<std::string>& row) {
  RowValues values;
  for (const auto& [name, idx] : cols.index) {
    if (idx < row.size()) values[name] = row[idx];
  }
  return values;
}

}  // namespace

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

std::string_view to_string(Source s) {
  switch (s) {
    case Source::socialchem: return "socialchem";
    case Source::mic: return "mic";
    case Source::sentiment: return "sentiment";
  }
  return "socialchem";
}

Source parse_source(std::string_view name) {
  const auto n = lower(name);
  if (n == "socialchem" || n == "socialchem-like") return Source::socialchem;
  if (n == "mic" || n == "mic-like") return Source::mic;
  if (n == "sentiment" || n == "sentiment-like" || n == "sst") {
    return Source::sentiment;
  }
  throw Error("unknown source '" + std::string(name) + "'");
}

std::string_view to_string(Field f) {
  switch (f) {
    case Field::situation: return "situation";
    case Field::foundation: return "foundation";
    case Field::rot: return "rot";
    case Field::judgment: return "judgment";
  }
  return "situation";
}

const std::string& SituationRecord::field(Field f) const {
  switch (f) {
    case Field::situation: return situation;
    case Field::foundation: return foundation;
    case Field::rot: return rot;
    case Field::judgment: return judgment;
  }
  return situation;
}

std::string& SituationRecord::field(Field f) {
  return const_cast<std::string&>(std::as_const(*this).field(f));
}

nlohmann::json to_json(const SituationRecord& r) {
  return nlohmann::json{{"id", r.id},
                        {"situation", r.situation},
                        {"foundation", r.foundation},
                        {"rot", r.rot},
                        {"judgment", r.judgment},
                        {"source", std::string(to_string(r.source))}};
}

SituationRecord record_from_json(const nlohmann::json& j) {
  SituationRecord r;
  r.id = j.at("id").get<std::string>();
  r.situation = j.at("situation").get<std::string>();
  r.foundation = j.value("foundation", "");
  r.rot = j.value("rot", "");
  r.judgment = j.value("judgment", "");
  r.source = parse_source(j.value("source", "socialchem"));
  return r;
}

PromptStrategy PromptStrategy::of(StrategyName name) {
  using F = Field;
  switch (name) {
    case StrategyName::rot: return {name, {F::situation}, {F::rot}};
    case StrategyName::moral_rot:
      return {name, {F::situation}, {F::foundation, F::rot}};
    case StrategyName::judg: return {name, {F::situation}, {F::judgment}};
    case StrategyName::moral_judg:
      return {name, {F::situation}, {F::foundation, F::judgment}};
    case StrategyName::rot_judg:
      return {name, {F::situation}, {F::rot, F::judgment}};
    case StrategyName::moral_rot_judg:
      return {name, {F::situation}, {F::foundation, F::rot, F::judgment}};
    case StrategyName::classify:
      return {name, {F::situation}, {F::foundation}};
  }
  throw Error("unknown strategy");
}

namespace {
constexpr std::array<std::pair<StrategyName, std::string_view>, 7>
    kStrategyNames = {{{StrategyName::rot, "rot"},
                       {StrategyName::moral_rot, "moral-rot"},
                       {StrategyName::judg, "judg"},
                       {StrategyName::moral_judg, "moral-judg"},
                       {StrategyName::rot_judg, "rot-judg"},
                       {StrategyName::moral_rot_judg, "moral-rot-judg"},
                       {StrategyName::classify, "classify"}}};
constexpr std::array<StrategyName, 7> kAllStrategies = {
    StrategyName::rot,        StrategyName::moral_rot,
    StrategyName::judg,       StrategyName::moral_judg,
    StrategyName::rot_judg,   StrategyName::moral_rot_judg,
    StrategyName::classify};
}  // namespace

std::span<const StrategyName> all_strategies() { return kAllStrategies; }

PromptStrategy PromptStrategy::parse(std::string_view name) {
  for (const auto& [value, text] : kStrategyNames) {
    if (text == name) return of(value);
  }
  throw Error("unknown strategy '" + std::string(name) + "'");
}

std::string_view PromptStrategy::label() const {
  for (const auto& [value, text] : kStrategyNames) {
    if (value == name) return text;
  }
  return "?";
}

InputFormat parse_format(std::string_view tag) {
  const auto t = lower(tag);
  if (t == "tsv") return InputFormat::tsv;
  if (t == "csv") return InputFormat::csv;
  if (t == "jsonl") return InputFormat::jsonl;
  throw Error("unknown format tag '" + std::string(tag) + "'");
}

LoadResult load_records(const std::filesystem::path& path, InputFormat format,
                        const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus file " + path.string());

  LoadResult result;
  std::set<std::string> seen;

  if (format == InputFormat::jsonl) {
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      if (normalize_whitespace(line).empty()) continue;
      ++row;
      RowValues values;
      try {
        const auto j = nlohmann::json::parse(line);
        if (!j.is_object()) throw Error("not an object");
        for (const auto& [key, val] : j.items()) {
          if (val.is_string()) values[lower(key)] = val.get<std::string>();
          else if (val.is_number()) values[lower(key)] = val.dump();
        }
      } catch (const std::exception& e) {
        result.report.skipped++;
        result.report.issues.push_back("row " + std::to_string(row) +
                                       ": invalid json");
        continue;
      }
      accept_row(values, row, path, options, seen, result);
    }
  } else {
    std::vector<std::string> header;
    std::string line;
    if (format == InputFormat::tsv) {
      if (!std::getline(in, line)) throw Error("empty corpus file " + path.string());
      if (!line.empty() && line.back() == '\r') line.pop_back();
      header = split_on(line, '\t');
    } else if (!read_csv_row(in, header)) {
      throw Error("empty corpus file " + path.string());
    }
    const auto cols = header_columns(header);
    if (!cols.index.contains("situation") &&
        !(cols.index.contains("prompt") && cols.index.contains("reply"))) {
      throw Error("corpus header has no situation column: " + path.string());
    }
    std::size_t row = 0;
    std::vector<std::string> fields;
    while (true) {
      if (format == InputFormat::tsv) {
        if (!std::getline(in, line)) break;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        fields = split_on(line, '\t');
      } else {
        if (!read_csv_row(in, fields)) break;
        if (fields.size() == 1 && fields[0].empty()) continue;
      }
      ++row;
      if (fields.size() != header.size()) {
        result.report.skipped++;
        result.report.issues.push_back(
            "row " + std::to_string(row) + ": expected " +
            std::to_string(header.size()) + " columns, got " +
            std::to_string(fields.size()));
        continue;
      }
      accept_row(row_values(cols, fields), row, path, options, seen, result);
    }
  }

  for (const auto& issue : result.report.issues) {
    log_warn(path.filename().string() + ": skipped " + issue);
  }
  if (result.records.empty()) {
    throw Error("no parseable rows in " + path.string());
  }
  return result;
}

std::span<const std::string_view> declared_labels(Source source) {
  switch (source) {
    case Source::socialchem: return kSocialChemLabels;
    case Source::mic: return kMicLabels;
    case Source::sentiment: return kSentimentLabels;
  }
  return {};
}

std::optional<std::string> canonical_label(std::string_view label,
                                           Source source) {
  const auto s = strip_label(label);
  if (source == Source::sentiment) {
    if (s == "0") return std::string("negative");
    if (s == "1") return std::string("positive");
  }
  for (auto declared : declared_labels(source)) {
    if (s == declared) return std::string(declared);
    const auto dash = declared.find('-');
    if (dash != std::string_view::npos &&
        (s == declared.substr(0, dash) || s == declared.substr(dash + 1))) {
      return std::string(declared);
    }
  }
  return std::nullopt;
}

bool same_label(std::string_view a, std::string_view b) {
  return strip_label(a) == strip_label(b);
}

std::vector<SituationRecord> filter_single_foundation(
    std::span<const SituationRecord> records) {
  std::vector<SituationRecord> out;
  for (const auto& r : records) {
    const auto parts = split_on(r.foundation, kFoundationDelimiter);
    const auto non_empty = std::count_if(parts.begin(), parts.end(), [](auto& p) {
      return !normalize_whitespace(p).empty();
    });
    if (non_empty == 1) out.push_back(r);
  }
  return out;
}

BinaryScheme parse_binary_scheme(std::string_view name) {
  const auto n = lower(name);
  if (n == "mic") return BinaryScheme::mic;
  if (n == "socialchem") return BinaryScheme::socialchem;
  throw Error("unknown binary scheme '" + std::string(name) + "'");
}

std::span<const std::string_view> scheme_labels(BinaryScheme scheme) {
  if (scheme == BinaryScheme::mic) return kMicScheme;
  return kSocialChemScheme;
}

int binarize_label(std::string_view label, BinaryScheme scheme) {
  const auto source =
      scheme == BinaryScheme::mic ? Source::mic : Source::socialchem;
  const auto canon = canonical_label(label, source);
  if (!canon) throw LabelError(std::string(label));
  const auto labels = scheme_labels(scheme);
  if (std::find(labels.begin(), labels.end(), *canon) == labels.end()) {
    throw LabelError(std::string(label));
  }
  // The first label of each scheme is the 0 class.
  return *canon == labels.front() ? 0 : 1;
}

int binarize_foundation(const SituationRecord& record, BinaryScheme scheme) {
  return binarize_label(record.foundation, scheme);
}

Splits make_splits(std::span<const SituationRecord> records,
                   const SplitSpec& spec) {
  if (spec.train_size == 0 || spec.dev_size == 0 || spec.test_size == 0) {
    throw Error("split sizes must be positive");
  }
  std::vector<SituationRecord> pool;
  if (spec.single_foundation_only) {
    pool = filter_single_foundation(records);
  } else {
    pool.assign(records.begin(), records.end());
  }
  const std::size_t need = spec.train_size + spec.dev_size + spec.test_size;
  if (need > pool.size()) {
    throw Error("insufficient records: need " + std::to_string(need) +
                ", have " + std::to_string(pool.size()) + " after filtering");
  }
  // Sample over id order so the split does not depend on storage order.
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pool[a].id < pool[b].id;
  });
  Rng rng(derive_seed(spec.seed, "make_splits"));
  rng.shuffle(std::span(order));

  Splits out;
  std::size_t pos = 0;
  auto take = [&](std::size_t n, std::vector<SituationRecord>& dst) {
    for (std::size_t i = 0; i < n; ++i) dst.push_back(pool[order[pos++]]);
  };
  take(spec.train_size, out.train);
  take(spec.dev_size, out.dev);
  take(spec.test_size, out.test);
  return out;
}

std::string_view field_header(Field f) {
  switch (f) {
    case Field::situation: return "Situation:";
    case Field::foundation: return "Moral Foundation:";
    case Field::rot: return "Rule of Thumb:";
    case Field::judgment: return "Ethical Judgment:";
  }
  return "";
}

namespace {

void require_field(const SituationRecord& r, Field f) {
  if (r.field(f).empty()) {
    throw Error("record '" + r.id + "' has no " + std::string(to_string(f)));
  }
}

}  // namespace

std::string render_prompt(const SituationRecord& record,
                          const PromptStrategy& strategy, RenderStage stage) {
  std::string out;
  for (const auto f : strategy.input_fields) {
    require_field(record, f);
    if (!out.empty()) out += '\n';
    out += field_header(f);
    out += ' ';
    out += record.field(f);
  }
  if (stage == RenderStage::inference_prefix) {
    out += '\n';
    out += field_header(strategy.target_fields.front());
    return out;
  }
  for (const auto f : strategy.target_fields) {
    require_field(record, f);
    out += '\n';
    out += field_header(f);
    out += ' ';
    out += record.field(f);
  }
  return out;
}

std::string render_target_portion(const SituationRecord& record,
                                  const PromptStrategy& strategy) {
  const auto full = render_prompt(record, strategy, RenderStage::train);
  const auto prefix =
      render_prompt(record, strategy, RenderStage::inference_prefix);
  return full.substr(prefix.size());
}

ParsedGeneration parse_generation(std::string_view text,
                                  const PromptStrategy& strategy) {
  static constexpr std::array<Field, 4> kHeaders = {
      Field::situation, Field::foundation, Field::rot, Field::judgment};

  struct Mark {
    std::size_t at;       // header start
    std::size_t content;  // first byte after the header
    std::optional<Field> field;
  };
  // The leading segment continues the first target header from the prefix.
  std::vector<Mark> marks{{0, 0, strategy.target_fields.front()}};
  std::size_t line = 0;
  while (line <= text.size()) {
    for (const auto f : kHeaders) {
      const auto h = field_header(f);
      if (text.substr(line).starts_with(h)) {
        marks.push_back({line, line + h.size(), f});
        break;
      }
    }
    const auto nl = text.find('\n', line);
    if (nl == std::string_view::npos) break;
    line = nl + 1;
  }

  ParsedGeneration out;
  std::set<Field> assigned;
  for (std::size_t i = 0; i < marks.size(); ++i) {
    const auto end = i + 1 < marks.size() ? marks[i + 1].at : text.size();
    const auto f = *marks[i].field;
    if (assigned.contains(f)) continue;
    auto value = normalize_whitespace(
        text.substr(marks[i].content, end - marks[i].content));
    if (i == 0 && value.empty()) continue;
    assigned.insert(f);
    out.fields[f] = std::move(value);
  }
  for (const auto f : strategy.target_fields) {
    auto& v = out.fields[f];
    if (v.empty()) out.missing.push_back(f);
  }
  // Keep only target fields in the map.
  for (auto it = out.fields.begin(); it != out.fields.end();) {
    const bool target = std::find(strategy.target_fields.begin(),
                                  strategy.target_fields.end(),
                                  it->first) != strategy.target_fields.end();
    it = target ? std::next(it) : out.fields.erase(it);
  }
  return out;
}

void write_records_jsonl(const std::filesystem::path& path,
                         std::span<const SituationRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::vector<SituationRecord> read_records_jsonl(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<SituationRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace probe
