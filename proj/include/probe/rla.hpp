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
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "probe/backend.hpp"
#include "probe/cache.hpp"
#include "probe/corpus.hpp"
#include "probe/metrics.hpp"

// Representational-likelihood analysis of a fine-tuned model.
//
// For a training sample t and a test sample s the score is
//   score = rep_sim(t, s) * P(target_t | context_t)
// where rep_sim is the mean cosine between final-token hidden states over
// blocks [start_layer, num_layers]. The correlation test asks whether
// high-score training targets are also more likely under the test context.

namespace probe {

// Mean cosine over block outputs [start_layer, num_layers]. Throws on
// mismatched shapes, an out-of-range start layer, or a zero-norm layer.
double representational_similarity(const LayerStack& a, const LayerStack& b,
                                   std::size_t start_layer);

struct RlaScore {
  std::string train_id;
  std::string test_id;
  double rep_sim = 0.0;
  double fit_likelihood = 0.0;
  double score = 0.0;  // rep_sim * fit_likelihood
  double cross_likelihood = 0.0;
};

struct RlaTestOutcome {
  std::string test_id;
  std::size_t n_sampled = 0;  // after dropping the median for odd n
  bool half_split_pass = false;
  double lower_mean = 0.0;  // mean cross_likelihood of the low-score half
  double upper_mean = 0.0;
  std::vector<RlaScore> scores;  // ascending by score, ties by train_id
};

struct RlaResult {
  std::vector<RlaTestOutcome> outcomes;
  double ratio = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::size_t start_layer = 0;
  std::string model_id;
};

struct SupportiveEntry {
  std::string train_id;
  double rep_sim = 0.0;
  double embedding_f1 = 0.0;  // between the two situations
  double fit_likelihood = 0.0;
  double score = 0.0;
  bool label_match = false;
};

struct SupportiveSet {
  std::string test_id;
  std::vector<SupportiveEntry> entries;  // descending score, ties by train_id
};

// Everything the analysis reads about samples, addressed by id. Calls may
// arrive concurrently from several threads.
class EvidenceSource {
 public:
  virtual ~EvidenceSource() = default;
  virtual LayerStack representation(const std::string& id) = 0;
  // P(target_t | context_t) for a training sample.
  virtual double fit_likelihood(const std::string& train_id) = 0;
  // P(target_t | context of the test sample).
  virtual double cross_likelihood(const std::string& train_id,
                                  const std::string& test_id) = 0;
  virtual double situation_f1(const std::string& train_id,
                              const std::string& test_id) = 0;
  virtual std::string label(const std::string& id) = 0;
  virtual std::string model_id() const { return {}; }
};

// Fixed values, for tests and for replaying precomputed evidence.
class TableEvidence : public EvidenceSource {
 public:
  std::map<std::string, LayerStack> stacks;
  std::map<std::string, double> fit;
  std::map<std::pair<std::string, std::string>, double> cross;  // (train, test)
  std::map<std::pair<std::string, std::string>, double> f1;      // (train, test)
  std::map<std::string, std::string> labels;

  LayerStack representation(const std::string& id) override;
  double fit_likelihood(const std::string& train_id) override;
  double cross_likelihood(const std::string& train_id,
                          const std::string& test_id) override;
  double situation_f1(const std::string& train_id,
                      const std::string& test_id) override;
  std::string label(const std::string& id) override;
};

enum class RepresentationInput { situation, inference_prefix };
RepresentationInput parse_representation_input(std::string_view name);
std::string_view to_string(RepresentationInput input);

struct ModelEvidenceOptions {
  RepresentationInput representation = RepresentationInput::situation;
  LikelihoodForm likelihood = LikelihoodForm::norm_prob;
  std::size_t embedding_layer = 0;  // 0 selects the last block
};

// Evidence computed from a fine-tuned decoder. Contexts are the strategy's
// inference prefixes and targets its target portions. Results are memoized
// and, when caches are given, shared through them.
class ModelEvidence : public EvidenceSource {
 public:
  ModelEvidence(ModelHandle model, PromptStrategy strategy,
                std::span<const SituationRecord> records,
                ModelEvidenceOptions options = {}, CacheSet* caches = nullptr);

  LayerStack representation(const std::string& id) override;
  double fit_likelihood(const std::string& train_id) override;
  double cross_likelihood(const std::string& train_id,
                          const std::string& test_id) override;
  double situation_f1(const std::string& train_id,
                      const std::string& test_id) override;
  std::string label(const std::string& id) override;
  std::string model_id() const override { return model_.model_id(); }

  const SituationRecord& record(const std::string& id) const;

 private:
  LikelihoodRecord likelihood(const std::string& context,
                              const std::string& continuation);

  ModelHandle model_;
  PromptStrategy strategy_;
  ModelEvidenceOptions options_;
  CacheSet* caches_;
  TokenEmbedder embed_;
  std::map<std::string, SituationRecord> records_;
  std::mutex mu_;
  std::map<std::string, LayerStack> stacks_;
};

struct RlaOptions {
  std::size_t n = 100;
  std::uint64_t seed = 1;
  std::size_t start_layer = 0;  // 0 selects default_start_layer
};

// The training ids drawn for one test sample: ids sorted, shuffled by a
// generator seeded from (seed, test_id), first n kept. Independent of the
// order the caller lists the training set in.
std::vector<std::string> sample_train_ids(std::span<const std::string> train_ids,
                                          const std::string& test_id,
                                          std::size_t n, std::uint64_t seed);

// Throws when n < 2 or n exceeds the training set.
RlaResult rla_correlation(EvidenceSource& evidence,
                          std::span<const std::string> test_ids,
                          std::span<const std::string> train_ids,
                          const RlaOptions& options);

// Model-backed form: every target must be non-empty under the strategy.
RlaResult rla_correlation(const ModelHandle& model,
                          std::span<const SituationRecord> test_set,
                          std::span<const SituationRecord> train_set,
                          const PromptStrategy& strategy,
                          const RlaOptions& options,
                          const ModelEvidenceOptions& evidence_options = {},
                          CacheSet* caches = nullptr);

// Exact top-k over the whole training set. Throws when k is 0 or exceeds
// the training set.
SupportiveSet top_k_supportive(EvidenceSource& evidence,
                               const std::string& test_id,
                               std::span<const std::string> train_ids,
                               std::size_t k, std::size_t start_layer);

struct LabelRatio {
  std::vector<double> per_rank;  // rank 1..k
  double pooled = 0.0;
  std::size_t pairs = 0;
};

// Throws on empty input or when a set has fewer than k entries.
LabelRatio same_label_ratio(std::span<const SupportiveSet> sets, std::size_t k);

// Mean fit likelihood over every entry of every set.
double mean_supportive_likelihood(std::span<const SupportiveSet> sets);

struct ProfileRow {
  std::size_t rank = 0;
  double mean_rep_sim = 0.0;
  double mean_embedding_f1 = 0.0;
  std::size_t count = 0;
};

// Rank-wise means over the first k entries. Sets shorter than k contribute
// to the ranks they have.
std::vector<ProfileRow> supportive_similarity_profile(
    std::span<const SupportiveSet> sets, std::size_t k);

nlohmann::json to_json(const RlaScore& s);
nlohmann::json to_json(const SupportiveSet& s);
SupportiveSet supportive_set_from_json(const nlohmann::json& j);

// One summary line, then one line per test sample.
void write_rla_result_jsonl(const std::filesystem::path& path,
                            const RlaResult& result);
RlaResult read_rla_result_jsonl(const std::filesystem::path& path);
// Every scored pair, one line each.
void write_rla_scores_jsonl(const std::filesystem::path& path,
                            const RlaResult& result);
void write_supportive_jsonl(const std::filesystem::path& path,
                            std::span<const SupportiveSet> sets);
std::vector<SupportiveSet> read_supportive_jsonl(const std::filesystem::path& path);
void write_profile_csv(const std::filesystem::path& path,
                       std::span<const ProfileRow> rows);

}  // namespace probe
