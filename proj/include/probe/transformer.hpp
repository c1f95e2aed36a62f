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

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "probe/tokenizer.hpp"

// Small pre-LN transformer used as the reference model: GPT-style decoder
// (causal attention, LM head tied to the token embedding) or bidirectional
// encoder (pooled first position feeds a linear classifier head). Separate
// q/k/v/o attention projections carry optional low-rank adapters.

namespace probe {

enum class ModelKind { decoder, encoder };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

struct ModelConfig {
  std::string name = "toy";
  ModelKind kind = ModelKind::decoder;
  std::size_t vocab_size = 0;
  std::size_t block_size = 64;  // context window in tokens, BOS included
  std::size_t n_layer = 2;
  std::size_t n_head = 2;
  std::size_t n_embd = 32;

  void validate() const;
};

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  std::span<float> span() { return data; }
  std::span<const float> span() const { return data; }
  void zero();
};

struct BlockParams {
  Tensor ln1_w, ln1_b;
  Tensor q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  Tensor ln2_w, ln2_b;
  Tensor fc_w, fc_b, proj_w, proj_b;
};

struct TransformerParams {
  Tensor wte, wpe, lnf_w, lnf_b;
  std::vector<BlockParams> blocks;

  static TransformerParams shaped(const ModelConfig& cfg);

  // Visits every tensor in canonical (serialization) order.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    f("wte", self.wte);
    f("wpe", self.wpe);
    for (std::size_t l = 0; l < self.blocks.size(); ++l) {
      auto& b = self.blocks[l];
      const std::string p = "h" + std::to_string(l) + ".";
      f(p + "ln1_w", b.ln1_w);
      f(p + "ln1_b", b.ln1_b);
      f(p + "q_w", b.q_w);
      f(p + "q_b", b.q_b);
      f(p + "k_w", b.k_w);
      f(p + "k_b", b.k_b);
      f(p + "v_w", b.v_w);
      f(p + "v_b", b.v_b);
      f(p + "o_w", b.o_w);
      f(p + "o_b", b.o_b);
      f(p + "ln2_w", b.ln2_w);
      f(p + "ln2_b", b.ln2_b);
      f(p + "fc_w", b.fc_w);
      f(p + "fc_b", b.fc_b);
      f(p + "proj_w", b.proj_w);
      f(p + "proj_b", b.proj_b);
    }
    f("lnf_w", self.lnf_w);
    f("lnf_b", self.lnf_b);
  }
};

enum class Projection { q = 0, k = 1, v = 2, o = 3 };

std::string_view projection_name(Projection p);  // "q_proj", ...
// Throws on names outside q_proj/k_proj/v_proj/o_proj.
Projection parse_projection(std::string_view name);

struct LoraConfig {
  std::size_t rank = 64;
  float alpha = 16.0f;
  float dropout = 0.1f;
  std::vector<Projection> targets = {Projection::q, Projection::k,
                                     Projection::v, Projection::o};

  float scale() const { return alpha / static_cast<float>(rank); }
  void validate() const;
};

// Low-rank update W + scale * B A on the targeted projections of every
// block. `a` is (rank, n_embd), `b` is (n_embd, rank); untargeted slots are
// empty tensors.
struct LoraParams {
  LoraConfig config;
  std::vector<std::array<Tensor, 4>> a;
  std::vector<std::array<Tensor, 4>> b;

  static LoraParams shaped(const ModelConfig& model, const LoraConfig& cfg);
  bool targets(Projection p) const;

  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    for (std::size_t l = 0; l < self.a.size(); ++l) {
      for (std::size_t p = 0; p < 4; ++p) {
        if (self.a[l][p].empty()) continue;
        const std::string name = "h" + std::to_string(l) + "." +
                                 std::string(projection_name(Projection(p)));
        f(name + ".lora_a", self.a[l][p]);
        f(name + ".lora_b", self.b[l][p]);
      }
    }
  }
};

// Linear classifier over the pooled encoder representation.
struct LinearHead {
  Tensor weight;  // (classes, n_embd)
  Tensor bias;    // (classes)

  static LinearHead shaped(std::size_t classes, std::size_t dim);
  std::size_t classes() const { return bias.size(); }
  std::size_t dim() const { return classes() ? weight.size() / classes() : 0; }
};

// Intermediate buffers of one forward pass over a single sequence, kept for
// the backward pass and for hidden-state readout.
struct BlockActivations {
  std::vector<float> ln1, ln1_mean, ln1_rstd;
  std::vector<float> q, k, v, probs, attn;
  std::vector<float> x_mid, ln2, ln2_mean, ln2_rstd;
  std::vector<float> fc, gelu;
  // Adapter path per projection: dropped-out input and its rank projection.
  std::array<std::vector<float>, 4> lora_in, lora_mid;
  std::array<std::vector<std::uint8_t>, 4> lora_keep;
};

struct Activations {
  std::size_t seq = 0;
  std::vector<int> ids;
  std::vector<std::vector<float>> stream;  // n_layer + 1 residual states
  std::vector<BlockActivations> blocks;
  std::vector<float> lnf, lnf_mean, lnf_rstd;

  // Residual stream after block `layer` (1-based); layer 0 is the embedding.
  std::span<const float> layer_output(std::size_t layer) const {
    return stream.at(layer);
  }
};

struct ForwardOptions {
  bool train = false;               // enables adapter dropout
  std::uint64_t dropout_seed = 0;   // mask is a pure function of this seed
};

class Transformer {
 public:
  Transformer(ModelConfig cfg, Tokenizer tokenizer);

  // GPT-2 style initialization, deterministic in `seed`.
  static Transformer initialize(ModelConfig cfg, Tokenizer tokenizer,
                                std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const Tokenizer& tokenizer() const { return tok_; }
  TransformerParams& params() { return params_; }
  const TransformerParams& params() const { return params_; }

  void attach_adapter(LoraParams adapter);
  void detach_adapter() { adapter_.reset(); }
  LoraParams* adapter() { return adapter_ ? &*adapter_ : nullptr; }
  const LoraParams* adapter() const { return adapter_ ? &*adapter_ : nullptr; }

  // "<name>@<16 hex digits>" over the weights and any attached adapter.
  std::string model_id() const;

  void save(const std::filesystem::path& dir) const;
  static Transformer load(const std::filesystem::path& dir);

  // Throws WindowOverflow when `ids` exceeds the context window.
  void forward(std::span<const int> ids, Activations& act,
               const ForwardOptions& options = {}) const;

  // Backpropagates `dfinal`, the gradient w.r.t. the final layer-norm
  // output (seq x n_embd). Gradients accumulate into `base` and `lora`;
  // either may be null to leave that parameter set frozen.
  void backward(const Activations& act, std::span<const float> dfinal,
                TransformerParams* base, LoraParams* lora) const;

  // Log-probabilities of `targets[i]` from the LM head at `positions[i]`.
  // When `dfinal` is non-empty, accumulates the gradient of
  // -scale * sum(logprobs) into it (and into `dwte` when given).
  std::vector<double> lm_head(const Activations& act,
                              std::span<const std::size_t> positions,
                              std::span<const int> targets,
                              std::span<float> dfinal, Tensor* dwte,
                              float scale) const;

  // Full next-token logits at one position.
  std::vector<float> logits_at(const Activations& act,
                               std::size_t position) const;

 private:
  ModelConfig cfg_;
  Tokenizer tok_;
  TransformerParams params_;
  std::optional<LoraParams> adapter_;
};

void save_adapter(const LoraParams& adapter, const std::string& base_model_id,
                  const std::filesystem::path& dir);
LoraParams load_adapter(const std::filesystem::path& dir,
                        std::string* base_model_id = nullptr);

// Seeded adapter initialization: A uniform in +-1/sqrt(n_embd), B zero, so
// a fresh adapter leaves the model unchanged.
LoraParams initialize_adapter(const ModelConfig& model, const LoraConfig& cfg,
                              std::uint64_t seed);

LinearHead initialize_head(std::size_t classes, std::size_t dim,
                           std::uint64_t seed);

}  // namespace probe
