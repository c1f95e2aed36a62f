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

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "probe/backend.hpp"

namespace probe {

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Harmonic mean, 0 when both inputs are 0.
double f_measure(double precision, double recall);

enum class RougeVariant { r1, r2, rL };

struct RougeOptions {
  bool stem = false;  // Porter stemming of tokens longer than 3 characters
};

// Lower-cased, every run of characters outside [a-z0-9] becomes a
// separator.
std::vector<std::string> rouge_tokens(std::string_view text,
                                      const RougeOptions& options = {});

// Scores are all zero when either side has no tokens.
Prf rouge(std::string_view candidate, std::string_view reference,
          RougeVariant variant, const RougeOptions& options = {});

// Original Porter (1980) suffix stripping.
std::string porter_stem(std::string_view word);

using TokenEmbedder =
    std::function<std::vector<std::vector<float>>(std::string_view)>;

// Embedder reading block outputs of a model at `layer` (1-based).
TokenEmbedder model_embedder(const ModelHandle& model, std::size_t layer);

// Greedy cosine matching without idf weighting. Throws when either text
// yields no token vectors.
Prf embedding_f1(std::string_view candidate, std::string_view reference,
                 const TokenEmbedder& embed);

// Affine baseline rescaling (x - b) / (1 - b).
double rescale_score(double value, double baseline);

struct PerplexityResult {
  double perplexity = 0.0;
  double mean_nll = 0.0;
  std::size_t tokens = 0;
  std::size_t window = 0;
  std::size_t stride = 0;
};

// Strided sliding windows of `window` tokens (plus BOS); each token is
// scored once, under the longest context its window provides.
PerplexityResult perplexity(const ModelHandle& model,
                            std::span<const int> stream, std::size_t window,
                            std::size_t stride);

// Throws on length mismatch or empty input.
double accuracy(std::span<const int> predictions, std::span<const int> gold);
double accuracy(std::span<const std::string> predictions,
                std::span<const std::string> gold);

struct MetricReport {
  double embedding_f1 = 0.0;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
  std::optional<double> embedding_f1_rescaled;
  std::optional<double> accuracy;
  std::optional<double> perplexity;
  std::size_t n_items = 0;
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json to_json(const MetricReport& report);
MetricReport metric_report_from_json(const nlohmann::json& j);

struct GenerationPair {
  std::string candidate;
  std::string reference;
};

struct ScoringOptions {
  RougeOptions rouge;
  std::optional<double> rescale_baseline;
};

// Mean Rouge-1/2/L F-measures and embedding-F1 over pairs. Pairs whose
// candidate has no alphanumeric tokens score 0 on every metric.
MetricReport score_pairs(std::span<const GenerationPair> pairs,
                         const TokenEmbedder& embed,
                         const ScoringOptions& options = {});

}  // namespace probe
