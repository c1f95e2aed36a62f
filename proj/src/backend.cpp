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

#include "probe/backend.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "probe/error.hpp"
#include "probe/hashing.hpp"

namespace probe {

ModelHandle::ModelHandle(std::shared_ptr<const Transformer> model)
    : model_(std::move(model)) {
  if (!model_) throw Error("null model");
  if (model_->config().n_layer < 2 || model_->config().n_embd < 2) {
    throw Error("models need at least 2 blocks and 2 hidden units");
  }
  id_ = model_->model_id();
}

ModelHandle ModelHandle::load(const std::filesystem::path& model_dir,
                              const std::optional<std::filesystem::path>& adapter_dir) {
  auto model = std::make_shared<Transformer>(Transformer::load(model_dir));
  if (adapter_dir) model->attach_adapter(load_adapter(*adapter_dir));
  return ModelHandle(std::move(model));
}

std::span<const float> LayerStack::layer(std::size_t index) const {
  if (index < 1 || index > num_layers) {
    throw Error("layer " + std::to_string(index) + " out of range 1.." +
                std::to_string(num_layers));
  }
  return std::span<const float>(data).subspan((index - 1) * hidden_dim,
                                              hidden_dim);
}

double likelihood_value(const LikelihoodRecord& r, LikelihoodForm form) {
  return form == LikelihoodForm::norm_prob ? r.norm_prob
                                           : std::exp(r.sum_logprob);
}

LikelihoodForm parse_likelihood_form(std::string_view name) {
  if (name == "norm_prob") return LikelihoodForm::norm_prob;
  if (name == "sum_prob") return LikelihoodForm::sum_prob;
  throw ConfigError("unknown likelihood form '" + std::string(name) +
                    "' (expected norm_prob or sum_prob)");
}

std::string_view to_string(LikelihoodForm form) {
  return form == LikelihoodForm::norm_prob ? "norm_prob" : "sum_prob";
}

std::string text_hash(std::string_view text) { return sha256_hex(text); }

std::vector<int> model_input(const ModelHandle& model, std::string_view text) {
  std::vector<int> ids{Tokenizer::kBos};
  const auto body = model.tokenizer().encode(text);
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

namespace {

void check_window(const ModelHandle& model, std::size_t tokens) {
  if (tokens > model.window()) {
    throw WindowOverflow("input of " + std::to_string(tokens) +
                         " tokens exceeds the context window of " +
                         std::to_string(model.window()));
  }
}

void require_decoder(const ModelHandle& model, std::string_view op) {
  if (model.kind() != ModelKind::decoder) {
    throw Error(std::string(op) + " needs a decoder model");
  }
}

}  // namespace

LikelihoodRecord conditional_likelihood(const ModelHandle& model,
                                        std::string_view context,
                                        std::string_view continuation) {
  require_decoder(model, "conditional_likelihood");
  std::vector<int> ids = model_input(model, context);
  const std::size_t context_len = ids.size();
  const auto cont = model.tokenizer().encode(continuation);
  if (cont.empty()) throw Error("continuation is empty after tokenization");
  ids.insert(ids.end(), cont.begin(), cont.end());
  check_window(model, ids.size());

  Activations act;
  model.model().forward(ids, act);
  std::vector<std::size_t> positions(cont.size());
  std::iota(positions.begin(), positions.end(), context_len - 1);
  LikelihoodRecord r;
  r.context_hash = text_hash(context);
  r.continuation_hash = text_hash(continuation);
  r.token_logprobs = model.model().lm_head(act, positions, cont, {}, nullptr, 1.0f);
  for (auto& lp : r.token_logprobs) lp = std::min(lp, 0.0);
  r.sum_logprob = std::accumulate(r.token_logprobs.begin(), r.token_logprobs.end(), 0.0);
  r.norm_prob = std::exp(r.sum_logprob / static_cast<double>(cont.size()));
  return r;
}

LayerStack final_token_hidden_states(const ModelHandle& model,
                                     std::string_view text) {
  const auto ids = model_input(model, text);
  if (ids.size() < 2) throw Error("text is empty after tokenization");
  check_window(model, ids.size());
  Activations act;
  model.model().forward(ids, act);
  LayerStack s;
  s.text_hash = text_hash(text);
  s.num_layers = model.num_layers();
  s.hidden_dim = model.hidden_dim();
  s.data.reserve(s.num_layers * s.hidden_dim);
  const std::size_t last = ids.size() - 1;
  for (std::size_t l = 1; l <= s.num_layers; ++l) {
    const auto stream = act.layer_output(l);
    s.data.insert(s.data.end(), stream.begin() + last * s.hidden_dim,
                  stream.begin() + (last + 1) * s.hidden_dim);
  }
  return s;
}

std::string generate_greedy(const ModelHandle& model, std::string_view prefix,
                            std::size_t max_new_tokens,
                            std::span<const std::string> stop) {
  require_decoder(model, "generate_greedy");
  std::vector<int> ids = model_input(model, prefix);
  check_window(model, ids.size());
  const int after = ids.back();
  std::vector<int> generated;
  std::string text;
  Activations act;
  for (std::size_t step = 0; step < max_new_tokens; ++step) {
    if (ids.size() >= model.window()) {
      throw WindowOverflow("generation reached the context window of " +
                           std::to_string(model.window()) + " tokens");
    }
    model.model().forward(ids, act);
    const auto logits = model.model().logits_at(act, ids.size() - 1);
    const int next = static_cast<int>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (next == Tokenizer::kEos) break;
    ids.push_back(next);
    generated.push_back(next);
    text = model.tokenizer().decode(generated, after);
    std::size_t cut = std::string::npos;
    for (const auto& s : stop) {
      if (s.empty()) continue;
      cut = std::min(cut, text.find(s));
    }
    if (cut != std::string::npos) return text.substr(0, cut);
  }
  return text;
}

std::vector<std::vector<float>> token_embeddings(const ModelHandle& model,
                                                 std::string_view text,
                                                 std::size_t layer) {
  if (layer < 1 || layer > model.num_layers()) {
    throw Error("embedding layer " + std::to_string(layer) +
                " out of range 1.." + std::to_string(model.num_layers()));
  }
  const auto ids = model_input(model, text);
  if (ids.size() < 2) throw Error("text is empty after tokenization");
  check_window(model, ids.size());
  Activations act;
  model.model().forward(ids, act);
  const std::size_t C = model.hidden_dim();
  const auto stream = act.layer_output(layer);
  std::vector<std::vector<float>> out;
  for (std::size_t t = 1; t < ids.size(); ++t) {
    out.emplace_back(stream.begin() + t * C, stream.begin() + (t + 1) * C);
  }
  return out;
}

std::vector<float> pooled_representation(const ModelHandle& model,
                                         std::string_view text) {
  if (model.kind() != ModelKind::encoder) {
    throw Error("pooled representation needs an encoder model");
  }
  const auto ids = model_input(model, text);
  check_window(model, ids.size());
  Activations act;
  model.model().forward(ids, act);
  return {act.lnf.begin(), act.lnf.begin() + model.hidden_dim()};
}

std::vector<float> classify_logits(const ModelHandle& model,
                                   const LinearHead& head,
                                   std::string_view text) {
  if (head.classes() == 0 || head.dim() != model.hidden_dim() ||
      head.weight.size() != head.classes() * model.hidden_dim()) {
    throw Error("classifier head shape does not match hidden size " +
                std::to_string(model.hidden_dim()));
  }
  const auto pooled = pooled_representation(model, text);
  std::vector<float> scores(head.classes());
  for (std::size_t c = 0; c < head.classes(); ++c) {
    float acc = head.bias.data[c];
    for (std::size_t i = 0; i < pooled.size(); ++i) {
      acc += head.weight.data[c * pooled.size() + i] * pooled[i];
    }
    scores[c] = acc;
  }
  return scores;
}

std::size_t default_start_layer(std::size_t num_layers) {
  if (num_layers >= 28) return 15;
  return std::min(num_layers, (num_layers + 1) / 2 + 1);
}

}  // namespace probe
