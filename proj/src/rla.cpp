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

#include "probe/rla.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "probe/error.hpp"
#include "probe/kernels.hpp"
#include "probe/parallel.hpp"
#include "probe/random.hpp"

namespace probe {

using json = nlohmann::json;

namespace {

std::size_t resolve_start_layer(std::size_t start_layer, std::size_t num_layers) {
  return start_layer == 0 ? default_start_layer(num_layers) : start_layer;
}

void check_unique(std::span<const std::string> ids, const char* what) {
  std::set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) {
      throw Error(std::string("duplicate ") + what + " id '" + id + "'");
    }
  }
}

template <class M, class K>
const auto& lookup(const M& m, const K& key, const std::string& what) {
  auto it = m.find(key);
  if (it == m.end()) throw Error("no " + what + " recorded");
  return it->second;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

}  // namespace

double representational_similarity(const LayerStack& a, const LayerStack& b,
                                   std::size_t start_layer) {
  if (a.num_layers != b.num_layers || a.hidden_dim != b.hidden_dim ||
      a.data.size() != a.num_layers * a.hidden_dim ||
      b.data.size() != b.num_layers * b.hidden_dim) {
    throw Error("layer stacks have mismatched shapes");
  }
  if (start_layer < 1 || start_layer > a.num_layers) {
    throw Error("start layer " + std::to_string(start_layer) + " outside 1.." +
                std::to_string(a.num_layers));
  }
  double out = 0.0;
  kernels::layer_cosine_mean({&out, 1}, a.data, b.data, 1, a.num_layers,
                             a.hidden_dim, start_layer);
  if (std::isnan(out)) throw Error("zero-norm layer vector in representational similarity");
  return out;
}

LayerStack TableEvidence::representation(const std::string& id) {
  return lookup(stacks, id, "layer stack for '" + id + "'");
}

double TableEvidence::fit_likelihood(const std::string& train_id) {
  return lookup(fit, train_id, "fit likelihood for '" + train_id + "'");
}

double TableEvidence::cross_likelihood(const std::string& train_id,
                                       const std::string& test_id) {
  return lookup(cross, std::pair{train_id, test_id},
                "cross likelihood for (" + train_id + ", " + test_id + ")");
}

double TableEvidence::situation_f1(const std::string& train_id,
                                   const std::string& test_id) {
  auto it = f1.find({train_id, test_id});
  return it == f1.end() ? 0.0 : it->second;
}

std::string TableEvidence::label(const std::string& id) {
  return lookup(labels, id, "label for '" + id + "'");
}

RepresentationInput parse_representation_input(std::string_view name) {
  if (name == "situation") return RepresentationInput::situation;
  if (name == "inference_prefix") return RepresentationInput::inference_prefix;
  throw ConfigError("unknown representation input '" + std::string(name) + "'");
}

std::string_view to_string(RepresentationInput input) {
  return input == RepresentationInput::situation ? "situation" : "inference_prefix";
}

ModelEvidence::ModelEvidence(ModelHandle model, PromptStrategy strategy,
                             std::span<const SituationRecord> records,
                             ModelEvidenceOptions options, CacheSet* caches)
    : model_(std::move(model)),
      strategy_(std::move(strategy)),
      options_(options),
      caches_(caches) {
  if (model_.kind() != ModelKind::decoder) {
    throw Error("representational likelihood analysis needs a decoder model");
  }
  if (options_.embedding_layer == 0) options_.embedding_layer = model_.num_layers();
  if (options_.embedding_layer > model_.num_layers()) {
    throw Error("embedding layer beyond the model depth");
  }
  embed_ = model_embedder(model_, options_.embedding_layer);
  for (const auto& r : records) {
    if (!records_.emplace(r.id, r).second) {
      throw Error("duplicate record id '" + r.id + "'");
    }
  }
}

const SituationRecord& ModelEvidence::record(const std::string& id) const {
  return lookup(records_, id, "record '" + id + "'");
}

LayerStack ModelEvidence::representation(const std::string& id) {
  {
    std::lock_guard lock(mu_);
    if (auto it = stacks_.find(id); it != stacks_.end()) return it->second;
  }
  const auto& r = record(id);
  const std::string text =
      options_.representation == RepresentationInput::situation
          ? r.situation
          : render_prompt(r, strategy_, RenderStage::inference_prefix);
  auto compute = [&] { return final_token_hidden_states(model_, text); };
  LayerStack s = caches_ ? caches_->hidden.get_or_compute(model_.model_id(),
                                                          text_hash(text), compute)
                         : compute();
  std::lock_guard lock(mu_);
  return stacks_.emplace(id, std::move(s)).first->second;
}

LikelihoodRecord ModelEvidence::likelihood(const std::string& context,
                                           const std::string& continuation) {
  auto compute = [&] { return conditional_likelihood(model_, context, continuation); };
  if (!caches_) return compute();
  return caches_->likelihood.get_or_compute(model_.model_id(), text_hash(context),
                                            text_hash(continuation), compute);
}

double ModelEvidence::fit_likelihood(const std::string& train_id) {
  const auto& r = record(train_id);
  return likelihood_value(
      likelihood(render_prompt(r, strategy_, RenderStage::inference_prefix),
                 render_target_portion(r, strategy_)),
      options_.likelihood);
}

double ModelEvidence::cross_likelihood(const std::string& train_id,
                                       const std::string& test_id) {
  return likelihood_value(
      likelihood(render_prompt(record(test_id), strategy_, RenderStage::inference_prefix),
                 render_target_portion(record(train_id), strategy_)),
      options_.likelihood);
}

double ModelEvidence::situation_f1(const std::string& train_id,
                                   const std::string& test_id) {
  return embedding_f1(record(train_id).situation, record(test_id).situation, embed_).f1;
}

std::string ModelEvidence::label(const std::string& id) {
  return record(id).foundation;
}

std::vector<std::string> sample_train_ids(std::span<const std::string> train_ids,
                                          const std::string& test_id,
                                          std::size_t n, std::uint64_t seed) {
  std::vector<std::string> ids(train_ids.begin(), train_ids.end());
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, test_id));
  rng.shuffle(std::span<std::string>(ids));
  ids.resize(std::min(n, ids.size()));
  return ids;
}

RlaResult rla_correlation(EvidenceSource& evidence,
                          std::span<const std::string> test_ids,
                          std::span<const std::string> train_ids,
                          const RlaOptions& options) {
  if (options.n < 2) throw Error("RLA sample size must be at least 2");
  if (options.n > train_ids.size()) {
    throw Error("RLA sample size " + std::to_string(options.n) +
                " exceeds the training set (" + std::to_string(train_ids.size()) + ")");
  }
  if (test_ids.empty()) throw Error("RLA needs at least one test sample");
  check_unique(train_ids, "training");
  check_unique(test_ids, "test");

  RlaResult result;
  result.n = options.n;
  result.seed = options.seed;
  result.model_id = evidence.model_id();
  result.outcomes.resize(test_ids.size());

  const auto probe_stack = evidence.representation(test_ids.front());
  result.start_layer = resolve_start_layer(options.start_layer, probe_stack.num_layers);

  parallel_for(test_ids.size(), [&](std::size_t t) {
    const std::string& test_id = test_ids[t];
    const auto test_stack = evidence.representation(test_id);
    std::vector<RlaScore> scores;
    for (const auto& train_id : sample_train_ids(train_ids, test_id, options.n, options.seed)) {
      RlaScore s;
      s.train_id = train_id;
      s.test_id = test_id;
      s.rep_sim = representational_similarity(evidence.representation(train_id),
                                              test_stack, result.start_layer);
      s.fit_likelihood = evidence.fit_likelihood(train_id);
      s.score = s.rep_sim * s.fit_likelihood;
      s.cross_likelihood = evidence.cross_likelihood(train_id, test_id);
      scores.push_back(std::move(s));
    }
    std::sort(scores.begin(), scores.end(), [](const RlaScore& a, const RlaScore& b) {
      if (a.score != b.score) return a.score < b.score;
      return a.train_id < b.train_id;
    });
    if (scores.size() % 2 == 1) scores.erase(scores.begin() + scores.size() / 2);

    auto& out = result.outcomes[t];
    out.test_id = test_id;
    out.n_sampled = scores.size();
    const std::size_t half = scores.size() / 2;
    double lower = 0.0, upper = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
      lower += scores[i].cross_likelihood;
      upper += scores[half + i].cross_likelihood;
    }
    out.lower_mean = lower / static_cast<double>(half);
    out.upper_mean = upper / static_cast<double>(half);
    out.half_split_pass = out.lower_mean < out.upper_mean;
    out.scores = std::move(scores);
  });

  std::size_t passes = 0;
  for (const auto& o : result.outcomes) passes += o.half_split_pass ? 1 : 0;
  result.ratio = static_cast<double>(passes) / static_cast<double>(result.outcomes.size());
  return result;
}

RlaResult rla_correlation(const ModelHandle& model,
                          std::span<const SituationRecord> test_set,
                          std::span<const SituationRecord> train_set,
                          const PromptStrategy& strategy,
                          const RlaOptions& options,
                          const ModelEvidenceOptions& evidence_options,
                          CacheSet* caches) {
  std::vector<SituationRecord> all(train_set.begin(), train_set.end());
  all.insert(all.end(), test_set.begin(), test_set.end());
  for (const auto& r : all) {
    for (const auto f : strategy.target_fields) {
      if (r.field(f).empty()) {
        throw Error("record '" + r.id + "' has an empty " + std::string(to_string(f)) +
                    " target under strategy " + std::string(strategy.label()));
      }
    }
  }
  ModelEvidence evidence(model, strategy, all, evidence_options, caches);
  std::vector<std::string> test_ids, train_ids;
  for (const auto& r : test_set) test_ids.push_back(r.id);
  for (const auto& r : train_set) train_ids.push_back(r.id);
  return rla_correlation(evidence, test_ids, train_ids, options);
}

SupportiveSet top_k_supportive(EvidenceSource& evidence,
                               const std::string& test_id,
                               std::span<const std::string> train_ids,
                               std::size_t k, std::size_t start_layer) {
  if (k == 0) throw Error("top-k needs k >= 1");
  if (k > train_ids.size()) {
    throw Error("k = " + std::to_string(k) + " exceeds the training set (" +
                std::to_string(train_ids.size()) + ")");
  }
  check_unique(train_ids, "training");
  const auto test_stack = evidence.representation(test_id);
  start_layer = resolve_start_layer(start_layer, test_stack.num_layers);

  std::vector<SupportiveEntry> all(train_ids.size());
  parallel_for(train_ids.size(), [&](std::size_t i) {
    auto& e = all[i];
    e.train_id = train_ids[i];
    e.rep_sim = representational_similarity(evidence.representation(e.train_id),
                                            test_stack, start_layer);
    e.fit_likelihood = evidence.fit_likelihood(e.train_id);
    e.score = e.rep_sim * e.fit_likelihood;
  });
  auto by_rank = [](const SupportiveEntry& a, const SupportiveEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.train_id < b.train_id;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    by_rank);
  all.resize(k);

  const std::string test_label = evidence.label(test_id);
  parallel_for(all.size(), [&](std::size_t i) {
    auto& e = all[i];
    e.embedding_f1 = evidence.situation_f1(e.train_id, test_id);
    e.label_match = same_label(evidence.label(e.train_id), test_label);
  });
  return SupportiveSet{test_id, std::move(all)};
}

LabelRatio same_label_ratio(std::span<const SupportiveSet> sets, std::size_t k) {
  if (sets.empty()) throw Error("same-label ratio over no supportive sets");
  if (k == 0) throw Error("same-label ratio needs k >= 1");
  LabelRatio out;
  out.per_rank.assign(k, 0.0);
  std::size_t matches = 0;
  for (const auto& s : sets) {
    if (s.entries.size() < k) {
      throw Error("supportive set for '" + s.test_id + "' has fewer than " +
                  std::to_string(k) + " entries");
    }
    for (std::size_t r = 0; r < k; ++r) {
      if (s.entries[r].label_match) {
        out.per_rank[r] += 1.0;
        ++matches;
      }
    }
  }
  for (auto& v : out.per_rank) v /= static_cast<double>(sets.size());
  out.pairs = sets.size() * k;
  out.pooled = static_cast<double>(matches) / static_cast<double>(out.pairs);
  return out;
}

double mean_supportive_likelihood(std::span<const SupportiveSet> sets) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : sets) {
    for (const auto& e : s.entries) {
      total += e.fit_likelihood;
      ++count;
    }
  }
  if (count == 0) throw Error("mean supportive likelihood over no entries");
  return total / static_cast<double>(count);
}

std::vector<ProfileRow> supportive_similarity_profile(
    std::span<const SupportiveSet> sets, std::size_t k) {
  if (sets.empty()) throw Error("similarity profile over no supportive sets");
  std::vector<ProfileRow> rows(k);
  for (std::size_t r = 0; r < k; ++r) rows[r].rank = r + 1;
  for (const auto& s : sets) {
    for (std::size_t r = 0; r < std::min(k, s.entries.size()); ++r) {
      rows[r].mean_rep_sim += s.entries[r].rep_sim;
      rows[r].mean_embedding_f1 += s.entries[r].embedding_f1;
      ++rows[r].count;
    }
  }
  for (auto& row : rows) {
    if (row.count == 0) continue;
    row.mean_rep_sim /= static_cast<double>(row.count);
    row.mean_embedding_f1 /= static_cast<double>(row.count);
  }
  return rows;
}

json to_json(const RlaScore& s) {
  return json{{"train_id", s.train_id},   {"test_id", s.test_id},
              {"rep_sim", s.rep_sim},     {"fit_likelihood", s.fit_likelihood},
              {"score", s.score},         {"cross_likelihood", s.cross_likelihood}};
}

json to_json(const SupportiveSet& s) {
  json entries = json::array();
  for (const auto& e : s.entries) {
    entries.push_back({{"train_id", e.train_id},
                       {"rep_sim", e.rep_sim},
                       {"embedding_f1", e.embedding_f1},
                       {"fit_likelihood", e.fit_likelihood},
                       {"score", e.score},
                       {"label_match", e.label_match}});
  }
  return json{{"test_id", s.test_id}, {"entries", std::move(entries)}};
}

SupportiveSet supportive_set_from_json(const json& j) {
  SupportiveSet s;
  s.test_id = j.at("test_id").get<std::string>();
  for (const auto& e : j.at("entries")) {
    s.entries.push_back({e.at("train_id").get<std::string>(), e.at("rep_sim").get<double>(),
                         e.at("embedding_f1").get<double>(),
                         e.at("fit_likelihood").get<double>(), e.at("score").get<double>(),
                         e.at("label_match").get<bool>()});
  }
  return s;
}

void write_rla_result_jsonl(const std::filesystem::path& path, const RlaResult& result) {
  auto out = open_out(path);
  out << json{{"kind", "summary"},
              {"ratio", result.ratio},
              {"n", result.n},
              {"seed", result.seed},
              {"start_layer", result.start_layer},
              {"model_id", result.model_id},
              {"tests", result.outcomes.size()}}
             .dump()
      << '\n';
  for (const auto& o : result.outcomes) {
    out << json{{"kind", "test"},
                {"test_id", o.test_id},
                {"n_sampled", o.n_sampled},
                {"half_split_pass", o.half_split_pass},
                {"lower_mean", o.lower_mean},
                {"upper_mean", o.upper_mean}}
               .dump()
        << '\n';
  }
}

RlaResult read_rla_result_jsonl(const std::filesystem::path& path) {
  RlaResult r;
  for (const auto& j : read_jsonl(path)) {
    if (j.at("kind") == "summary") {
      r.ratio = j.at("ratio").get<double>();
      r.n = j.at("n").get<std::size_t>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.start_layer = j.at("start_layer").get<std::size_t>();
      r.model_id = j.at("model_id").get<std::string>();
    } else {
      RlaTestOutcome o;
      o.test_id = j.at("test_id").get<std::string>();
      o.n_sampled = j.at("n_sampled").get<std::size_t>();
      o.half_split_pass = j.at("half_split_pass").get<bool>();
      o.lower_mean = j.at("lower_mean").get<double>();
      o.upper_mean = j.at("upper_mean").get<double>();
      r.outcomes.push_back(std::move(o));
    }
  }
  return r;
}

void write_rla_scores_jsonl(const std::filesystem::path& path, const RlaResult& result) {
  auto out = open_out(path);
  for (const auto& o : result.outcomes) {
    for (const auto& s : o.scores) out << to_json(s).dump() << '\n';
  }
}

void write_supportive_jsonl(const std::filesystem::path& path,
                            std::span<const SupportiveSet> sets) {
  auto out = open_out(path);
  for (const auto& s : sets) out << to_json(s).dump() << '\n';
}

std::vector<SupportiveSet> read_supportive_jsonl(const std::filesystem::path& path) {
  std::vector<SupportiveSet> out;
  for (const auto& j : read_jsonl(path)) out.push_back(supportive_set_from_json(j));
  return out;
}

void write_profile_csv(const std::filesystem::path& path,
                       std::span<const ProfileRow> rows) {
  auto out = open_out(path);
  out << "rank,mean_rep_sim,mean_embedding_f1,count\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%zu\n", r.rank, r.mean_rep_sim,
                  r.mean_embedding_f1, r.count);
    out << buf;
  }
}

}  // namespace probe
