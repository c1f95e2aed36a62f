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

#include "probe/experiment.hpp"

#include <omp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>

#include "probe/cache.hpp"
#include "probe/corpus.hpp"
#include "probe/error.hpp"
#include "probe/figures.hpp"
#include "probe/log.hpp"
#include "probe/metrics.hpp"
#include "probe/parallel.hpp"
#include "probe/random.hpp"
#include "probe/rla.hpp"
#include "probe/synth.hpp"
#include "probe/tuning.hpp"

namespace probe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::pair<Command, std::string_view>, 12> kCommands{{
    {Command::ingest, "ingest"},
    {Command::train_clf, "train-clf"},
    {Command::converge, "converge"},
    {Command::sft, "sft"},
    {Command::evaluate, "evaluate"},
    {Command::rla, "rla"},
    {Command::supportive, "supportive"},
    {Command::perplexity, "perplexity"},
    {Command::report, "report"},
    {Command::synth, "synth"},
    {Command::init_model, "init-model"},
    {Command::lm_train, "lm-train"},
}};

std::string describe(const json& v) {
  if (v.is_null()) return "null or number";
  if (v.is_number_unsigned()) return "non-negative integer";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  return v.type_name();
}

bool compatible(const json& def, const json& v) {
  if (def.is_null()) return v.is_null() || v.is_number();
  if (def.is_number_unsigned()) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  }
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array();
  return false;
}

void merge_checked(json& base, const json& user, const std::string& where) {
  if (!user.is_object()) {
    throw ConfigError((where.empty() ? std::string("config") : where) + " must be an object");
  }
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key: " + key);
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
      continue;
    }
    if (!compatible(slot, it.value())) {
      throw ConfigError("config key " + key + " expects " + describe(slot));
    }
    slot = it.value();
  }
}

// Runs `f`, turning library errors into configuration errors.
template <class F>
auto as_config(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(what + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

LogLevel parse_log_level(std::string_view name) {
  if (name == "debug") return LogLevel::debug;
  if (name == "info") return LogLevel::info;
  if (name == "warn") return LogLevel::warn;
  if (name == "error") return LogLevel::error;
  if (name == "silent") return LogLevel::silent;
  throw ConfigError("unknown log level: " + std::string(name));
}

void require_file(const std::string& value, const std::string& key) {
  if (value.empty()) throw ConfigError(key + " is required");
  if (!fs::exists(value)) throw ConfigError(key + " does not exist: " + value);
}

void require_splits(const json& c, std::initializer_list<const char*> names) {
  const std::string dir = c["splits_dir"];
  require_file(dir, "splits_dir");
  for (const char* n : names) {
    if (!fs::exists(fs::path(dir) / (std::string(n) + ".jsonl"))) {
      throw ConfigError("splits_dir has no " + std::string(n) + ".jsonl: " + dir);
    }
  }
}

void require_model(const json& c) {
  require_file(c["model"]["path"], "model.path");
  const std::string adapter = c["model"]["adapter"];
  if (!adapter.empty()) require_file(adapter, "model.adapter");
}

json without(json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

ClassifierConfig classifier_of(const json& c) {
  return as_config("classifier", [&] { return classifier_config_from_json(c["classifier"]); });
}

SftConfig sft_of(const json& c) {
  json j = c["sft"];
  j["strategy"] = c["strategy"];
  j["seed"] = c["seed"];
  return as_config("sft", [&] { return sft_config_from_json(j); });
}

LmTrainConfig lm_train_of(const json& c) {
  json j = without(c["lm_train"], {"texts", "labeled", "window", "dev_size"});
  j["seed"] = c["seed"];
  const SftConfig s = as_config("lm_train", [&] { return sft_config_from_json(j); });
  return static_cast<const LmTrainConfig&>(s);
}

PromptStrategy strategy_of(const json& c) {
  return as_config("strategy", [&] { return PromptStrategy::parse(c["strategy"].get<std::string>()); });
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

enum class JsonlKind { records, labeled };

JsonlKind jsonl_kind(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw Error("empty file: " + path.string());
  const auto first = json::parse(lines.front());
  if (first.contains("situation")) return JsonlKind::records;
  if (first.contains("text") && first.contains("label")) return JsonlKind::labeled;
  throw Error("unrecognized JSONL rows in " + path.string());
}

std::vector<SituationRecord> read_split(const json& c, const std::string& name) {
  return read_records_jsonl(fs::path(c["splits_dir"].get<std::string>()) / (name + ".jsonl"));
}

std::vector<SituationRecord> limited(std::vector<SituationRecord> v, std::size_t limit) {
  if (limit && v.size() > limit) v.resize(limit);
  return v;
}

std::size_t block_or_default(const ModelHandle& h, std::size_t layer) {
  if (layer == 0) return h.num_layers();
  if (layer > h.num_layers()) {
    throw Error("layer " + std::to_string(layer) + " exceeds the model's " +
                std::to_string(h.num_layers()) + " blocks");
  }
  return layer;
}

struct ModelRef {
  fs::path model;
  fs::path adapter;
};

ModelRef resolve_model_ref(const fs::path& path, const std::string& adapter) {
  ModelRef ref{path, adapter};
  const auto best = path / "best.json";
  if (fs::exists(best)) {
    const auto j = read_json(best);
    const fs::path m = j.at("model").get<std::string>();
    ref.model = m.is_absolute() ? m : path / m;
    if (adapter.empty() && !j.at("adapter").is_null()) {
      const fs::path a = j.at("adapter").get<std::string>();
      ref.adapter = a.is_absolute() ? a : path / a;
    }
  }
  return ref;
}

// Records which checkpoint a training run selected, so later runs can name
// the run directory as their model.
void write_best(const fs::path& out, const LmTrainResult& r, const ModelRef& base, TuneMode mode) {
  const auto checkpoint = (fs::path("checkpoints") / r.trace.best_checkpoint).string();
  json j;
  if (mode == TuneMode::lora) {
    j["model"] = fs::absolute(base.model).lexically_normal().string();
    j["adapter"] = checkpoint;
  } else {
    j["model"] = checkpoint;
    j["adapter"] = nullptr;
  }
  j["checkpoint"] = r.trace.best_checkpoint;
  j["best_dev_loss"] = r.trace.best_dev_loss;
  j["model_id"] = ModelHandle(r.model).model_id();
  write_json(out / "best.json", j);
}

std::optional<CacheSet> caches_of(const json& c) {
  const std::string dir = c["cache_dir"];
  if (dir.empty()) return std::nullopt;
  return std::optional<CacheSet>(std::in_place, dir);
}

ModelEvidenceOptions evidence_of(const json& section) {
  ModelEvidenceOptions o;
  o.representation = parse_representation_input(section["representation"].get<std::string>());
  o.likelihood = parse_likelihood_form(section["likelihood"].get<std::string>());
  o.embedding_layer = section["embedding_layer"];
  return o;
}

void write_traces_csv(const fs::path& path, const std::vector<TrainingTrace>& traces) {
  std::string s = "seed,epoch,step,train_loss,dev_loss,train_acc,dev_acc\n";
  for (const auto& t : traces) {
    for (const auto& p : t.points) {
      s += std::to_string(t.seed) + "," + std::to_string(p.epoch) + "," + std::to_string(p.step) +
           "," + fmt(p.train_loss) + "," + fmt(p.dev_loss) + "," +
           (p.train_acc ? fmt(*p.train_acc) : "") + "," + (p.dev_acc ? fmt(*p.dev_acc) : "") + "\n";
    }
  }
  write_text_file(path, s);
}

// Pipelines. Each reads the resolved config and writes into `out`.

void run_ingest(const json& c, const fs::path& out) {
  const auto& cj = c["corpus"];
  LoadOptions lo;
  lo.source = parse_source(cj["source"].get<std::string>());
  lo.validate_labels = cj["validate_labels"];
  lo.mic_joiner = cj["mic_joiner"];
  const auto loaded =
      load_records(cj["path"].get<std::string>(), parse_format(cj["format"].get<std::string>()), lo);
  const auto& sj = c["split"];
  SplitSpec spec;
  spec.train_size = sj["train_size"];
  spec.dev_size = sj["dev_size"];
  spec.test_size = sj["test_size"];
  spec.seed = c["seed"];
  spec.single_foundation_only = sj["single_foundation_only"];
  if (spec.train_size == 0 && spec.dev_size == 0 && spec.test_size == 0) {
    const std::size_t pool = spec.single_foundation_only
                                 ? filter_single_foundation(loaded.records).size()
                                 : loaded.records.size();
    const auto share = [&](std::size_t i) {
      return static_cast<std::size_t>(std::floor(sj["fractions"][i].get<double>() * pool));
    };
    spec.train_size = share(0);
    spec.dev_size = share(1);
    spec.test_size = share(2);
  }
  const auto splits = make_splits(loaded.records, spec);
  write_records_jsonl(out / "train.jsonl", splits.train);
  write_records_jsonl(out / "dev.jsonl", splits.dev);
  write_records_jsonl(out / "test.jsonl", splits.test);
  write_json(out / "manifest.json",
             json{{"corpus", cj["path"]},
                  {"loaded", loaded.report.loaded},
                  {"skipped", loaded.report.skipped},
                  {"issues", loaded.report.issues},
                  {"train_size", splits.train.size()},
                  {"dev_size", splits.dev.size()},
                  {"test_size", splits.test.size()},
                  {"seed", spec.seed},
                  {"single_foundation_only", spec.single_foundation_only}});
  log_info("ingest: " + std::to_string(loaded.report.loaded) + " loaded, " +
           std::to_string(loaded.report.skipped) + " skipped");
}

void run_train_clf(const json& c, const fs::path& out) {
  const auto model = load_model_ref(c["model"]["path"].get<std::string>());
  const auto cfg = classifier_of(c);
  const auto& cj = c["classifier"];
  const auto train = synth::read_labeled_jsonl(cj["train"].get<std::string>());
  const auto dev = synth::read_labeled_jsonl(cj["dev"].get<std::string>());
  const auto traces = train_classifier(model.model(), train, dev, cj["num_classes"], cfg);
  fs::create_directories(out / "traces");
  json best = json::array();
  double sum = 0.0;
  for (const auto& t : traces) {
    write_trace_jsonl(out / "traces" / ("seed-" + std::to_string(t.seed) + ".jsonl"), t);
    const double acc = t.points[t.best_index].dev_acc.value_or(0.0);
    best.push_back(acc);
    sum += acc;
  }
  write_traces_csv(out / "epoch_curves.csv", traces);
  MetricReport r;
  r.accuracy = sum / static_cast<double>(traces.size());
  r.n_items = dev.size();
  r.metadata = {{"model_id", model.model_id()}, {"seeds", cfg.seeds}, {"best_dev_acc", best}};
  write_json(out / "metric_report.json", to_json(r));
}

void run_converge(const json& c, const fs::path& out) {
  const auto model = load_model_ref(c["model"]["path"].get<std::string>());
  const auto cfg = classifier_of(c);
  const auto& cj = c["classifier"];
  const auto pool = synth::read_labeled_jsonl(cj["train"].get<std::string>());
  const auto dev = synth::read_labeled_jsonl(cj["dev"].get<std::string>());
  const auto& g = c["converge"];
  const auto sizes = size_progression(g["start"], g["stop"], g["step"]);
  const auto curve = convergence_sweep(model.model(), pool, dev, sizes, cj["num_classes"], cfg);
  write_convergence_csv(out / "convergence.csv", curve);
  json j = json::array();
  for (const auto& p : curve) {
    j.push_back({{"size", p.size}, {"mean_best_dev_acc", p.mean_best_dev_acc}, {"best_dev_acc", p.best_dev_acc}});
  }
  write_json(out / "convergence.json", json{{"model_id", model.model_id()}, {"seeds", cfg.seeds}, {"points", j}});
}

void run_sft(const json& c, const fs::path& out) {
  const auto ref = resolve_model_ref(c["model"]["path"].get<std::string>(), c["model"]["adapter"]);
  const auto base = load_model_ref(c["model"]["path"].get<std::string>(), c["model"]["adapter"]);
  const auto cfg = sft_of(c);
  const auto train = read_split(c, "train");
  const auto dev = read_split(c, "dev");
  const auto result = sft_train(base, train, dev, cfg, out);
  write_trace_jsonl(out / "trace.jsonl", result.trace);
  write_best(out, result, ref, cfg.mode);
}

void run_lm_train(const json& c, const fs::path& out) {
  const auto ref = resolve_model_ref(c["model"]["path"].get<std::string>(), c["model"]["adapter"]);
  const auto base = load_model_ref(c["model"]["path"].get<std::string>(), c["model"]["adapter"]);
  const auto cfg = lm_train_of(c);
  const auto& lj = c["lm_train"];
  std::size_t window = lj["window"];
  if (window == 0) window = base.window() - 1;
  std::vector<LmExample> examples;
  for (const auto& p : lj["texts"]) {
    const auto lines = read_lines(p.get<std::string>());
    const auto ex = pretraining_examples(base.tokenizer(), lines, window);
    examples.insert(examples.end(), ex.begin(), ex.end());
  }
  for (const auto& p : lj["labeled"]) {
    for (const auto& x : synth::read_labeled_jsonl(p.get<std::string>())) {
      examples.push_back({model_input(base, synth::task_prompt(x)),
                          base.tokenizer().encode(synth::task_target(x))});
    }
  }
  const std::size_t dev_size = lj["dev_size"];
  if (dev_size == 0 || dev_size >= examples.size()) {
    throw Error("lm_train.dev_size must leave training examples: " + std::to_string(examples.size()) +
                " available");
  }
  Rng rng(derive_seed(cfg.seed, "lm-train-split"));
  rng.shuffle(std::span<LmExample>(examples));
  const std::vector<LmExample> dev(examples.end() - static_cast<std::ptrdiff_t>(dev_size), examples.end());
  examples.resize(examples.size() - dev_size);
  const auto result = train_lm(base.model(), examples, dev, cfg, out);
  write_trace_jsonl(out / "trace.jsonl", result.trace);
  write_best(out, result, ref, cfg.mode);
}

void run_evaluate(const json& c, const fs::path& out) {
  const auto model = load_model_ref(c["model"]["path"].get<std::string>(), c["model"]["adapter"]);
  const auto strategy = strategy_of(c);
  const auto& ej = c["evaluate"];
  const auto records = read_split(c, ej["split"]);
  const std::size_t layer = block_or_default(model, ej["embedding_layer"]);
  GenerationOptions go;
  go.max_new_tokens = ej["max_new_tokens"];
  go.scoring.rouge.stem = ej["rouge_stemming"];
  if (!ej["rescale_baseline"].is_null()) go.scoring.rescale_baseline = ej["rescale_baseline"].get<double>();
  std::vector<GenerationRecord> generations;
  auto report = evaluate_generation(model, records, strategy, model_embedder(model, layer), go, &generations);
  report.metadata["embedding_layer"] = layer;
  report.metadata["split"] = ej["split"];
  write_json(out / "metric_report.json", to_json(report));
  std::string lines;
  for (const auto& g : generations) {
    json fields = json::object();
    for (const auto& [f, text] : g.fields) fields[std::string(to_string(f))] = text;
    lines += json{{"id", g.id}, {"prefix", g.prefix}, {"generation", g.generation},
                  {"fields", fields}, {"gold", g.gold}}.dump() + "\n";
  }
  write_text_file(out / "generations.jsonl", lines);
}

void run_rla(const json& c, const fs::path& out) {
  const auto model = load_model_ref(c["model"]["path"].get<std::string>(), c["model"]["adapter"]);
  const auto strategy = strategy_of(c);
  const auto& rj = c["rla"];
  const auto train = read_split(c, "train");
  const auto test = limited(read_split(c, "test"), rj["test_limit"]);
  RlaOptions ro;
  ro.n = rj["n"];
  ro.seed = c["seed"];
  ro.start_layer = rj["start_layer"];
  auto caches = caches_of(c);
  const auto result = rla_correlation(model, test, train, strategy, ro, evidence_of(rj),
                                      caches ? &*caches : nullptr);
  write_rla_result_jsonl(out / "rla_result.jsonl", result);
  write_rla_scores_jsonl(out / "rla_scores.jsonl", result);
  log_info("rla ratio " + fmt(result.ratio) + " over " + std::to_string(test.size()) + " tests");
}

void run_supportive(const json& c, const fs::path& out) {
  const auto model = load_model_ref(c["model"]["path"].get<std::string>(), c["model"]["adapter"]);
  const auto strategy = strategy_of(c);
  const auto& sj = c["supportive"];
  const auto train = read_split(c, "train");
  const auto test = limited(read_split(c, "test"), sj["test_limit"]);
  std::vector<SituationRecord> all = train;
  all.insert(all.end(), test.begin(), test.end());
  auto caches = caches_of(c);
  ModelEvidence evidence(model, strategy, all, evidence_of(sj), caches ? &*caches : nullptr);
  std::vector<std::string> train_ids;
  for (const auto& r : train) train_ids.push_back(r.id);
  const std::size_t k = sj["k"];
  std::size_t start = sj["start_layer"];
  if (start == 0) start = default_start_layer(model.num_layers());
  std::vector<SupportiveSet> sets(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    sets[i] = top_k_supportive(evidence, test[i].id, train_ids, k, start);
  });
  write_supportive_jsonl(out / "supportive.jsonl", sets);
  write_profile_csv(out / "profile.csv", supportive_similarity_profile(sets, k));
  const auto ratio = same_label_ratio(sets, k);
  write_json(out / "label_ratio.json",
             json{{"k", k},
                  {"per_rank", ratio.per_rank},
                  {"pooled", ratio.pooled},
                  {"pairs", ratio.pairs},
                  {"mean_supportive_likelihood", mean_supportive_likelihood(sets)},
                  {"start_layer", start},
                  {"model_id", model.model_id()}});
}

void run_perplexity(const json& c, const fs::path& out) {
  const auto model = load_model_ref(c["model"]["path"].get<std::string>(), c["model"]["adapter"]);
  const auto& pj = c["perplexity"];
  std::vector<int> stream;
  for (const auto& line : read_lines(pj["stream"].get<std::string>())) {
    const auto ids = model.tokenizer().encode(line);
    stream.insert(stream.end(), ids.begin(), ids.end());
    stream.push_back(Tokenizer::kEos);
  }
  std::size_t window = pj["window"];
  if (window == 0) window = model.window() - 1;
  std::size_t stride = pj["stride"];
  if (stride == 0) stride = std::max<std::size_t>(1, window / 2);
  const auto p = perplexity(model, stream, window, stride);
  MetricReport r;
  r.perplexity = p.perplexity;
  r.n_items = p.tokens;
  r.metadata = {{"model_id", model.model_id()}, {"window", p.window}, {"stride", p.stride},
                {"tokens", p.tokens}, {"mean_nll", p.mean_nll}, {"stream", pj["stream"]}};
  write_json(out / "metric_report.json", to_json(r));
}

void run_synth(const json& c, const fs::path& out) {
  const auto& sj = c["synth"];
  const std::string kind = sj["kind"];
  const std::size_t count = sj["count"];
  const std::uint64_t seed = c["seed"];
  if (kind == "judgment") {
    write_records_jsonl(out / "data.jsonl", synth::judgment_corpus(count, seed, sj["first_index"]));
  } else if (kind == "semantic") {
    synth::write_labeled_jsonl(out / "data.jsonl", synth::semantic_task(count, seed));
  } else if (kind == "pragmatic") {
    synth::write_labeled_jsonl(out / "data.jsonl",
                               synth::pragmatic_task(count, seed, sj["rule_rate"].get<double>()));
  } else {
    std::string s;
    for (const auto& line : synth::general_corpus(count, seed)) s += line + "\n";
    write_text_file(out / "data.txt", s);
  }
}

void run_init_model(const json& c, const fs::path& out) {
  const auto& mj = c["init_model"];
  std::vector<std::string> texts;
  for (const Field f : {Field::situation, Field::foundation, Field::rot, Field::judgment}) {
    texts.emplace_back(field_header(f));
  }
  for (const auto& p : mj["vocab"]) {
    const fs::path path = p.get<std::string>();
    if (path.extension() != ".jsonl") {
      const auto lines = read_lines(path);
      texts.insert(texts.end(), lines.begin(), lines.end());
    } else if (jsonl_kind(path) == JsonlKind::records) {
      for (const auto& r : read_records_jsonl(path)) {
        for (const Field f : {Field::situation, Field::foundation, Field::rot, Field::judgment}) {
          texts.push_back(r.field(f));
        }
      }
    } else {
      for (const auto& x : synth::read_labeled_jsonl(path)) {
        texts.push_back(synth::task_prompt(x) + synth::task_target(x));
      }
    }
  }
  ModelConfig mc;
  mc.name = mj["name"];
  mc.kind = parse_model_kind(mj["kind"].get<std::string>());
  mc.block_size = mj["block_size"];
  mc.n_layer = mj["n_layer"];
  mc.n_head = mj["n_head"];
  mc.n_embd = mj["n_embd"];
  const auto model = Transformer::initialize(mc, Tokenizer::build(texts, mj["min_count"]), c["seed"]);
  model.save(out / "model");
  write_json(out / "best.json",
             json{{"model", "model"}, {"adapter", nullptr}, {"model_id", model.model_id()}});
}

// Report tables, gathered from completed run directories.

struct RunInfo {
  fs::path dir;
  json config;
  Command command;
  std::string label;
};

RunInfo read_run(const fs::path& dir) {
  RunInfo r;
  r.dir = dir;
  r.config = read_json(dir / "config.json");
  r.command = parse_command(r.config.at("command").get<std::string>());
  r.label = r.config.value("label", "");
  if (r.label.empty()) r.label = fs::path(dir).lexically_normal().filename().string();
  if (r.label.empty()) r.label = fs::path(dir).lexically_normal().parent_path().filename().string();
  return r;
}

void report_epoch_curves(const std::vector<RunInfo>& runs, const fs::path& out) {
  std::string csv = "run,seed,index,epoch,step,train_loss,dev_loss,train_acc,dev_acc\n";
  LineChart chart{"Epoch curves", "evaluation", "accuracy (classifiers) or loss (language models)", {}};
  for (const auto& run : runs) {
    std::vector<TrainingTrace> traces;
    if (run.command == Command::train_clf) {
      for (const auto& s : run.config["classifier"]["seeds"]) {
        traces.push_back(read_trace_jsonl(run.dir / "traces" / ("seed-" + std::to_string(s.get<std::uint64_t>()) + ".jsonl")));
      }
    } else if (run.command == Command::sft || run.command == Command::lm_train) {
      traces.push_back(read_trace_jsonl(run.dir / "trace.jsonl"));
    } else {
      continue;
    }
    std::size_t length = 0;
    bool acc = true;
    for (const auto& t : traces) {
      length = std::max(length, t.points.size());
      for (const auto& p : t.points) {
        acc = acc && p.train_acc && p.dev_acc;
        csv += csv_field(run.label) + "," + std::to_string(t.seed) + "," +
               std::to_string(&p - t.points.data() + 1) + "," + std::to_string(p.epoch) + "," +
               std::to_string(p.step) + "," + fmt(p.train_loss) + "," + fmt(p.dev_loss) + "," +
               (p.train_acc ? fmt(*p.train_acc) : "") + "," + (p.dev_acc ? fmt(*p.dev_acc) : "") + "\n";
      }
    }
    Series train{run.label + (acc ? " train acc" : " train loss"), {}, {}};
    Series dev{run.label + (acc ? " dev acc" : " dev loss"), {}, {}};
    for (std::size_t i = 0; i < length; ++i) {
      double tr = 0.0, dv = 0.0;
      std::size_t n = 0;
      for (const auto& t : traces) {
        if (i >= t.points.size()) continue;
        const auto& p = t.points[i];
        tr += acc ? *p.train_acc : p.train_loss;
        dv += acc ? *p.dev_acc : p.dev_loss;
        ++n;
      }
      train.x.push_back(static_cast<double>(i + 1));
      train.y.push_back(tr / static_cast<double>(n));
      dev.x.push_back(static_cast<double>(i + 1));
      dev.y.push_back(dv / static_cast<double>(n));
    }
    chart.series.push_back(std::move(train));
    chart.series.push_back(std::move(dev));
  }
  write_text_file(out / "epoch_curves.csv", csv);
  write_text_file(out / "epoch_curves.svg", render_svg(chart));
}

void report_convergence(const std::vector<RunInfo>& runs, const fs::path& out) {
  std::string csv = "run,size,mean_best_dev_acc\n";
  LineChart chart{"Convergence", "training size", "best dev accuracy", {}};
  for (const auto& run : runs) {
    if (run.command != Command::converge) continue;
    Series s{run.label, {}, {}};
    const auto doc = read_json(run.dir / "convergence.json");
    for (const auto& p : doc.at("points")) {
      const double size = p.at("size").get<double>();
      const double acc = p.at("mean_best_dev_acc").get<double>();
      csv += csv_field(run.label) + "," + std::to_string(p.at("size").get<std::size_t>()) + "," + fmt(acc) + "\n";
      s.x.push_back(size);
      s.y.push_back(acc);
    }
    chart.series.push_back(std::move(s));
  }
  write_text_file(out / "convergence.csv", csv);
  write_text_file(out / "convergence.svg", render_svg(chart));
}

void report_rank_profiles(const std::vector<RunInfo>& runs, const fs::path& out) {
  std::string csv = "run,rank,mean_rep_sim,mean_embedding_f1,count\n";
  LineChart chart{"Supportive sample profiles", "rank", "mean value", {}};
  for (const auto& run : runs) {
    if (run.command != Command::supportive) continue;
    const auto sets = read_supportive_jsonl(run.dir / "supportive.jsonl");
    const auto rows = supportive_similarity_profile(sets, run.config["supportive"]["k"]);
    Series sim{run.label + " similarity", {}, {}}, f1{run.label + " embedding-F1", {}, {}};
    for (const auto& r : rows) {
      csv += csv_field(run.label) + "," + std::to_string(r.rank) + "," + fmt(r.mean_rep_sim) + "," +
             fmt(r.mean_embedding_f1) + "," + std::to_string(r.count) + "\n";
      sim.x.push_back(static_cast<double>(r.rank));
      sim.y.push_back(r.mean_rep_sim);
      f1.x.push_back(static_cast<double>(r.rank));
      f1.y.push_back(r.mean_embedding_f1);
    }
    chart.series.push_back(std::move(sim));
    chart.series.push_back(std::move(f1));
  }
  write_text_file(out / "rank_profiles.csv", csv);
  write_text_file(out / "rank_profiles.svg", render_svg(chart));
}

void report_ratio_bars(const std::vector<RunInfo>& runs, const fs::path& out) {
  std::string csv = "run,kind,ratio\n";
  BarChart chart{"Ratios", "ratio", {}};
  for (const auto& run : runs) {
    double ratio = 0.0;
    std::string kind;
    if (run.command == Command::supportive) {
      ratio = read_json(run.dir / "label_ratio.json").at("pooled").get<double>();
      kind = "same-label";
    } else if (run.command == Command::rla) {
      ratio = read_rla_result_jsonl(run.dir / "rla_result.jsonl").ratio;
      kind = "rla";
    } else {
      continue;
    }
    csv += csv_field(run.label) + "," + kind + "," + fmt(ratio) + "\n";
    chart.bars.push_back({run.label + " " + kind, ratio});
  }
  write_text_file(out / "ratio_bars.csv", csv);
  write_text_file(out / "ratio_bars.svg", render_svg(chart));
}

void report_perplexity_bars(const std::vector<RunInfo>& runs, const fs::path& out) {
  std::string csv = "run,perplexity,window,stride\n";
  BarChart chart{"Perplexity", "perplexity", {}};
  for (const auto& run : runs) {
    if (run.command != Command::perplexity) continue;
    const auto r = metric_report_from_json(read_json(run.dir / "metric_report.json"));
    const double p = r.perplexity.value_or(std::nan(""));
    csv += csv_field(run.label) + "," + fmt(p) + "," + r.metadata.at("window").dump() + "," +
           r.metadata.at("stride").dump() + "\n";
    chart.bars.push_back({run.label, p});
  }
  write_text_file(out / "perplexity_bars.csv", csv);
  write_text_file(out / "perplexity_bars.svg", render_svg(chart));
}

void run_report(const json& c, const fs::path& out) {
  std::vector<RunInfo> runs;
  for (const auto& r : c["report"]["runs"]) runs.push_back(read_run(r.get<std::string>()));
  report_epoch_curves(runs, out);
  report_convergence(runs, out);
  report_rank_profiles(runs, out);
  report_ratio_bars(runs, out);
  report_perplexity_bars(runs, out);
}

void prepare_run_dir(const fs::path& out, bool overwrite) {
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!overwrite || !fs::exists(out / "config.json")) {
      throw ConfigError("out_dir is not empty: " + out.string());
    }
    fs::remove_all(out);
  }
  fs::create_directories(out);
}

// Mirrors log lines into the run directory for the lifetime of the run.
class RunLog {
 public:
  explicit RunLog(const fs::path& path) : file_(std::make_shared<std::ofstream>(path, std::ios::binary)) {
    auto file = file_;
    set_log_sink([file](LogLevel, std::string_view line) { *file << line << '\n' << std::flush; });
  }
  ~RunLog() { set_log_sink({}); }
  RunLog(const RunLog&) = delete;
  RunLog& operator=(const RunLog&) = delete;

 private:
  std::shared_ptr<std::ofstream> file_;
};

}  // namespace

Command parse_command(std::string_view name) {
  for (const auto& [c, n] : kCommands) {
    if (n == name) return c;
  }
  throw ConfigError("unknown command: " + std::string(name));
}

std::string_view to_string(Command command) {
  for (const auto& [c, n] : kCommands) {
    if (c == command) return n;
  }
  return "?";
}

json default_config() {
  json classifier = to_json(ClassifierConfig{});
  classifier["train"] = "";
  classifier["dev"] = "";
  classifier["num_classes"] = 2u;
  json lm = without(to_json(LmTrainConfig{}), {"seed"});
  lm["texts"] = json::array();
  lm["labeled"] = json::array();
  lm["window"] = 0u;
  lm["dev_size"] = 100u;
  return json{
      {"schema_version", kConfigSchemaVersion},
      {"command", "ingest"},
      {"label", ""},
      {"seed", 1u},
      {"out_dir", ""},
      {"overwrite", false},
      {"cache_dir", ""},
      {"threads", 0u},
      {"log_level", "info"},
      {"strategy", "judg"},
      {"model", {{"path", ""}, {"adapter", ""}}},
      {"splits_dir", ""},
      {"corpus",
       {{"path", ""}, {"format", "jsonl"}, {"source", "socialchem"}, {"validate_labels", true}, {"mic_joiner", " "}}},
      {"split",
       {{"train_size", 0u}, {"dev_size", 0u}, {"test_size", 0u}, {"single_foundation_only", true},
        {"fractions", {0.8, 0.1, 0.1}}}},
      {"classifier", classifier},
      {"converge", {{"start", 1000u}, {"stop", 20000u}, {"step", 2000u}}},
      {"sft", without(to_json(SftConfig{}), {"strategy", "seed"})},
      {"lm_train", lm},
      {"evaluate",
       {{"split", "test"}, {"max_new_tokens", 48u}, {"embedding_layer", 0u}, {"rouge_stemming", false},
        {"rescale_baseline", nullptr}}},
      {"rla",
       {{"n", 100u}, {"start_layer", 0u}, {"representation", "situation"}, {"likelihood", "norm_prob"},
        {"embedding_layer", 0u}, {"test_limit", 0u}}},
      {"supportive",
       {{"k", 10u}, {"start_layer", 0u}, {"representation", "situation"}, {"likelihood", "norm_prob"},
        {"embedding_layer", 0u}, {"test_limit", 0u}}},
      {"perplexity", {{"stream", ""}, {"window", 0u}, {"stride", 0u}}},
      {"report", {{"runs", json::array()}}},
      {"synth", {{"kind", "judgment"}, {"count", 500u}, {"first_index", 0u}, {"rule_rate", 0.4}}},
      {"init_model",
       {{"kind", "decoder"}, {"name", "toy"}, {"n_layer", 2u}, {"n_head", 2u}, {"n_embd", 32u},
        {"block_size", 64u}, {"vocab", json::array()}, {"min_count", 1u}}},
  };
}

json resolve_config(const json& user) {
  if (user.is_object() && user.contains("schema_version") &&
      user.at("schema_version") != json(kConfigSchemaVersion)) {
    throw ConfigError("unsupported schema_version " + user.at("schema_version").dump() + "; expected " +
                      std::to_string(kConfigSchemaVersion));
  }
  json c = default_config();
  merge_checked(c, user, "");
  return c;
}

void apply_override(json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override must look like key=value: " + std::string(assignment));
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("empty segment in override key: " + key);
    if (!node->is_object()) throw ConfigError("override key " + key + " descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

void validate_config(const json& c) {
  const Command cmd = parse_command(c.at("command").get<std::string>());
  if (c["out_dir"].get<std::string>().empty()) throw ConfigError("out_dir is required");
  parse_log_level(c["log_level"].get<std::string>());
  switch (cmd) {
    case Command::ingest: {
      const auto& cj = c["corpus"];
      require_file(cj["path"], "corpus.path");
      as_config("corpus.format", [&] { return parse_format(cj["format"].get<std::string>()); });
      as_config("corpus.source", [&] { return parse_source(cj["source"].get<std::string>()); });
      const auto& fr = c["split"]["fractions"];
      if (fr.size() != 3) throw ConfigError("split.fractions needs three entries");
      double total = 0.0;
      for (const auto& f : fr) {
        if (!f.is_number() || !(f.get<double>() > 0.0)) throw ConfigError("split.fractions must be positive");
        total += f.get<double>();
      }
      if (total > 1.0 + 1e-9) throw ConfigError("split.fractions sum above 1");
      break;
    }
    case Command::train_clf:
    case Command::converge: {
      require_model(c);
      classifier_of(c);
      require_file(c["classifier"]["train"], "classifier.train");
      require_file(c["classifier"]["dev"], "classifier.dev");
      if (c["classifier"]["num_classes"].get<std::size_t>() < 2) {
        throw ConfigError("classifier.num_classes must be at least 2");
      }
      if (cmd == Command::converge) {
        const auto& g = c["converge"];
        if (g["start"].get<std::size_t>() == 0 || g["step"].get<std::size_t>() == 0 ||
            g["stop"].get<std::size_t>() < g["start"].get<std::size_t>()) {
          throw ConfigError("converge needs 0 < start <= stop and step > 0");
        }
      }
      break;
    }
    case Command::sft:
      require_model(c);
      require_splits(c, {"train", "dev"});
      sft_of(c);
      break;
    case Command::lm_train: {
      require_model(c);
      lm_train_of(c);
      const auto& lj = c["lm_train"];
      if (lj["texts"].empty() && lj["labeled"].empty()) {
        throw ConfigError("lm_train needs texts or labeled inputs");
      }
      for (const char* key : {"texts", "labeled"}) {
        for (const auto& p : lj[key]) {
          if (!p.is_string()) throw ConfigError(std::string("lm_train.") + key + " lists paths");
          require_file(p, std::string("lm_train.") + key);
        }
      }
      break;
    }
    case Command::evaluate: {
      require_model(c);
      strategy_of(c);
      const std::string split = c["evaluate"]["split"];
      if (split != "train" && split != "dev" && split != "test") {
        throw ConfigError("evaluate.split must be train, dev or test");
      }
      require_splits(c, {split.c_str()});
      if (c["evaluate"]["max_new_tokens"].get<std::size_t>() == 0) {
        throw ConfigError("evaluate.max_new_tokens must be positive");
      }
      break;
    }
    case Command::rla:
    case Command::supportive: {
      require_model(c);
      strategy_of(c);
      require_splits(c, {"train", "test"});
      const auto& section = c[cmd == Command::rla ? "rla" : "supportive"];
      as_config("evidence options", [&] { return evidence_of(section); });
      if (cmd == Command::rla && section["n"].get<std::size_t>() < 2) throw ConfigError("rla.n must be at least 2");
      if (cmd == Command::supportive && section["k"].get<std::size_t>() == 0) {
        throw ConfigError("supportive.k must be positive");
      }
      break;
    }
    case Command::perplexity:
      require_model(c);
      require_file(c["perplexity"]["stream"], "perplexity.stream");
      break;
    case Command::report:
      if (c["report"]["runs"].empty()) throw ConfigError("report.runs lists no run directories");
      for (const auto& r : c["report"]["runs"]) {
        if (!r.is_string()) throw ConfigError("report.runs lists paths");
        require_file(r, "report.runs entry");
        if (!fs::exists(fs::path(r.get<std::string>()) / "config.json")) {
          throw ConfigError("not a run directory: " + r.get<std::string>());
        }
      }
      break;
    case Command::synth: {
      const std::string kind = c["synth"]["kind"];
      if (kind != "judgment" && kind != "semantic" && kind != "pragmatic" && kind != "general") {
        throw ConfigError("synth.kind must be judgment, semantic, pragmatic or general");
      }
      if (c["synth"]["count"].get<std::size_t>() == 0) throw ConfigError("synth.count must be positive");
      const double rate = c["synth"]["rule_rate"];
      if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("synth.rule_rate must lie in [0, 1]");
      break;
    }
    case Command::init_model: {
      const auto& mj = c["init_model"];
      as_config("init_model.kind", [&] { return parse_model_kind(mj["kind"].get<std::string>()); });
      ModelConfig mc;
      mc.vocab_size = 5;
      mc.block_size = mj["block_size"];
      mc.n_layer = mj["n_layer"];
      mc.n_head = mj["n_head"];
      mc.n_embd = mj["n_embd"];
      as_config("init_model", [&] {
        mc.validate();
        return 0;
      });
      if (mj["vocab"].empty()) throw ConfigError("init_model.vocab lists no files");
      for (const auto& p : mj["vocab"]) {
        if (!p.is_string()) throw ConfigError("init_model.vocab lists paths");
        require_file(p, "init_model.vocab entry");
      }
      break;
    }
  }
}

ModelHandle load_model_ref(const fs::path& path, const std::string& adapter) {
  const auto ref = resolve_model_ref(path, adapter);
  if (ref.adapter.empty()) return ModelHandle::load(ref.model);
  return ModelHandle::load(ref.model, ref.adapter);
}

fs::path run_experiment(const json& config) {
  const json c = resolve_config(config);
  validate_config(c);
  const fs::path out = c["out_dir"].get<std::string>();
  prepare_run_dir(out, c["overwrite"]);
  write_json(out / "config.json", c);
  RunLog log(out / "run.log");
  set_log_level(parse_log_level(c["log_level"].get<std::string>()));
  if (const std::size_t threads = c["threads"]; threads > 0) omp_set_num_threads(static_cast<int>(threads));

  switch (parse_command(c["command"].get<std::string>())) {
    case Command::ingest: run_ingest(c, out); break;
    case Command::train_clf: run_train_clf(c, out); break;
    case Command::converge: run_converge(c, out); break;
    case Command::sft: run_sft(c, out); break;
    case Command::evaluate: run_evaluate(c, out); break;
    case Command::rla: run_rla(c, out); break;
    case Command::supportive: run_supportive(c, out); break;
    case Command::perplexity: run_perplexity(c, out); break;
    case Command::report: run_report(c, out); break;
    case Command::synth: run_synth(c, out); break;
    case Command::init_model: run_init_model(c, out); break;
    case Command::lm_train: run_lm_train(c, out); break;
  }
  log_info(std::string(to_string(parse_command(c["command"].get<std::string>()))) + " finished: " + out.string());
  return out;
}

}  // namespace probe
