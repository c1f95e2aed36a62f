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

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "probe/transformer.hpp"

namespace probe {

// Read-only view of a loaded model. Copies share the same immutable weights.
class ModelHandle {
 public:
  explicit ModelHandle(std::shared_ptr<const Transformer> model);

  // Loads a checkpoint directory and, optionally, an adapter directory.
  static ModelHandle load(const std::filesystem::path& model_dir,
                          const std::optional<std::filesystem::path>& adapter_dir = {});

  const std::string& model_id() const { return id_; }
  std::size_t num_layers() const { return model_->config().n_layer; }
  std::size_t hidden_dim() const { return model_->config().n_embd; }
  std::size_t vocab_size() const { return model_->config().vocab_size; }
  std::size_t window() const { return model_->config().block_size; }
  ModelKind kind() const { return model_->config().kind; }
  const Transformer& model() const { return *model_; }
  const Tokenizer& tokenizer() const { return model_->tokenizer(); }

 private:
  std::shared_ptr<const Transformer> model_;
  std::string id_;
};

// Final-token hidden state at every block output of one text.
struct LayerStack {
  std::string text_hash;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::vector<float> data;  // (num_layers, hidden_dim), row-major

  // 1-based block index.
  std::span<const float> layer(std::size_t index) const;
  friend bool operator==(const LayerStack&, const LayerStack&) = default;
};

struct LikelihoodRecord {
  std::string context_hash;
  std::string continuation_hash;
  std::vector<double> token_logprobs;
  double sum_logprob = 0.0;
  double norm_prob = 0.0;  // exp(mean token logprob)

  friend bool operator==(const LikelihoodRecord&, const LikelihoodRecord&) = default;
};

enum class LikelihoodForm { norm_prob, sum_prob };

// The probability a caller should use under `form`: norm_prob, or
// exp(sum_logprob) for the unnormalized joint probability.
double likelihood_value(const LikelihoodRecord& r, LikelihoodForm form);
LikelihoodForm parse_likelihood_form(std::string_view name);
std::string_view to_string(LikelihoodForm form);

std::string text_hash(std::string_view text);

// Token ids fed to the model for `text`: BOS followed by the encoding.
std::vector<int> model_input(const ModelHandle& model, std::string_view text);

// Context and continuation are tokenized separately and concatenated, so
// the continuation's tokens do not depend on the context.
LikelihoodRecord conditional_likelihood(const ModelHandle& model,
                                        std::string_view context,
                                        std::string_view continuation);

LayerStack final_token_hidden_states(const ModelHandle& model,
                                     std::string_view text);

// Argmax decoding. Stops at EOS, at the token budget, or just before the
// first occurrence of any stop string in the decoded continuation.
std::string generate_greedy(const ModelHandle& model, std::string_view prefix,
                            std::size_t max_new_tokens,
                            std::span<const std::string> stop = {});

// One vector per text token (BOS excluded) at block output `layer`
// (1-based).
std::vector<std::vector<float>> token_embeddings(const ModelHandle& model,
                                                 std::string_view text,
                                                 std::size_t layer);

// Encoder pooled representation: final-norm output at the first position.
std::vector<float> pooled_representation(const ModelHandle& model,
                                         std::string_view text);

std::vector<float> classify_logits(const ModelHandle& model,
                                   const LinearHead& head,
                                   std::string_view text);

// First block used for representational similarity when none is
// configured: 15 for deep models, the upper half otherwise.
std::size_t default_start_layer(std::size_t num_layers);

}  // namespace probe
