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

#include "probe/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "probe/error.hpp"
#include "probe/hashing.hpp"
#include "probe/kernels.hpp"
#include "probe/random.hpp"

namespace probe {

namespace k = kernels;
using json = nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

std::size_t product(const std::vector<std::size_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void fill_normal(Tensor& t, Rng& rng, double stddev) {
  for (auto& x : t.data) x = static_cast<float>(rng.normal() * stddev);
}

void fill_constant(Tensor& t, float value) {
  std::fill(t.data.begin(), t.data.end(), value);
}

void write_tensors(std::ofstream& out, auto& params) {
  params.visit([&](const std::string&, const Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  });
}

void read_tensors(const std::filesystem::path& path, auto& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::size_t expected = 0;
  params.visit([&](const std::string&, Tensor& t) { expected += t.size(); });
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected * sizeof(float)) {
    throw Error("size mismatch in " + path.string() + ": expected " +
                std::to_string(expected * sizeof(float)) + " bytes, found " +
                std::to_string(bytes));
  }
  in.seekg(0);
  params.visit([&](const std::string&, Tensor& t) {
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
  });
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void hash_into(std::string& buffer, const Tensor& t) {
  buffer.append(reinterpret_cast<const char*>(t.data.data()),
                t.size() * sizeof(float));
}

// Counter-based keep mask so dropout is reproducible without carrying RNG
// state through the pass.
bool keep(std::uint64_t seed, std::size_t layer, std::size_t proj,
          std::size_t index, float rate) {
  const std::uint64_t h = splitmix64(
      seed ^ splitmix64((layer << 48) ^ (proj << 40) ^ index));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u >= rate;
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::decoder ? "decoder" : "encoder";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "decoder") return ModelKind::decoder;
  if (name == "encoder") return ModelKind::encoder;
  throw ConfigError("unknown model kind '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (vocab_size < 5) throw ConfigError("model vocab_size must be at least 5");
  if (block_size < 2) throw ConfigError("model block_size must be at least 2");
  if (n_layer == 0) throw ConfigError("model n_layer must be positive");
  if (n_head == 0 || n_embd == 0 || n_embd % n_head != 0) {
    throw ConfigError("model n_embd must be a positive multiple of n_head");
  }
}

Tensor::Tensor(std::vector<std::size_t> dims)
    : shape(std::move(dims)), data(product(shape), 0.0f) {}

void Tensor::zero() { std::fill(data.begin(), data.end(), 0.0f); }

TransformerParams TransformerParams::shaped(const ModelConfig& cfg) {
  const std::size_t C = cfg.n_embd;
  TransformerParams p;
  p.wte = Tensor({cfg.vocab_size, C});
  p.wpe = Tensor({cfg.block_size, C});
  p.lnf_w = Tensor({C});
  p.lnf_b = Tensor({C});
  p.blocks.resize(cfg.n_layer);
  for (auto& b : p.blocks) {
    b.ln1_w = Tensor({C});
    b.ln1_b = Tensor({C});
    for (Tensor* w : {&b.q_w, &b.k_w, &b.v_w, &b.o_w}) *w = Tensor({C, C});
    for (Tensor* w : {&b.q_b, &b.k_b, &b.v_b, &b.o_b}) *w = Tensor({C});
    b.ln2_w = Tensor({C});
    b.ln2_b = Tensor({C});
    b.fc_w = Tensor({4 * C, C});
    b.fc_b = Tensor({4 * C});
    b.proj_w = Tensor({C, 4 * C});
    b.proj_b = Tensor({C});
  }
  return p;
}

std::string_view projection_name(Projection p) {
  switch (p) {
    case Projection::q: return "q_proj";
    case Projection::k: return "k_proj";
    case Projection::v: return "v_proj";
    case Projection::o: return "o_proj";
  }
  return "";
}

Projection parse_projection(std::string_view name) {
  for (auto p : {Projection::q, Projection::k, Projection::v, Projection::o}) {
    if (projection_name(p) == name) return p;
  }
  throw ConfigError("unknown adapter target '" + std::string(name) +
                    "' (expected q_proj, k_proj, v_proj or o_proj)");
}

void LoraConfig::validate() const {
  if (rank == 0) throw ConfigError("lora rank must be positive");
  if (!(alpha > 0.0f)) throw ConfigError("lora alpha must be positive");
  if (!(dropout >= 0.0f && dropout < 1.0f)) {
    throw ConfigError("lora dropout must be in [0, 1)");
  }
  if (targets.empty()) throw ConfigError("lora needs at least one target");
}

LoraParams LoraParams::shaped(const ModelConfig& model, const LoraConfig& cfg) {
  cfg.validate();
  LoraParams p;
  p.config = cfg;
  p.a.resize(model.n_layer);
  p.b.resize(model.n_layer);
  for (std::size_t l = 0; l < model.n_layer; ++l) {
    for (auto t : cfg.targets) {
      const auto i = static_cast<std::size_t>(t);
      p.a[l][i] = Tensor({cfg.rank, model.n_embd});
      p.b[l][i] = Tensor({model.n_embd, cfg.rank});
    }
  }
  return p;
}

bool LoraParams::targets(Projection p) const {
  return !a.empty() && !a[0][static_cast<std::size_t>(p)].empty();
}

LinearHead LinearHead::shaped(std::size_t classes, std::size_t dim) {
  LinearHead h;
  h.weight = Tensor({classes, dim});
  h.bias = Tensor({classes});
  return h;
}

Transformer::Transformer(ModelConfig cfg, Tokenizer tokenizer)
    : cfg_(std::move(cfg)), tok_(std::move(tokenizer)) {
  cfg_.vocab_size = tok_.size();
  cfg_.validate();
  params_ = TransformerParams::shaped(cfg_);
  fill_constant(params_.lnf_w, 1.0f);
  for (auto& b : params_.blocks) {
    fill_constant(b.ln1_w, 1.0f);
    fill_constant(b.ln2_w, 1.0f);
  }
}

Transformer Transformer::initialize(ModelConfig cfg, Tokenizer tokenizer,
                                    std::uint64_t seed) {
  Transformer m(std::move(cfg), std::move(tokenizer));
  Rng rng(derive_seed(seed, "transformer-init"));
  const double residual_std =
      0.02 / std::sqrt(2.0 * static_cast<double>(m.cfg_.n_layer));
  fill_normal(m.params_.wte, rng, 0.02);
  fill_normal(m.params_.wpe, rng, 0.01);
  for (auto& b : m.params_.blocks) {
    fill_normal(b.q_w, rng, 0.02);
    fill_normal(b.k_w, rng, 0.02);
    fill_normal(b.v_w, rng, 0.02);
    fill_normal(b.o_w, rng, residual_std);
    fill_normal(b.fc_w, rng, 0.02);
    fill_normal(b.proj_w, rng, residual_std);
  }
  return m;
}

void Transformer::attach_adapter(LoraParams adapter) {
  if (adapter.a.size() != cfg_.n_layer) {
    throw Error("adapter has " + std::to_string(adapter.a.size()) +
                " layers, model has " + std::to_string(cfg_.n_layer));
  }
  for (const auto& layer : adapter.a) {
    for (const auto& t : layer) {
      if (!t.empty() && (t.shape.size() != 2 || t.shape[1] != cfg_.n_embd)) {
        throw Error("adapter width does not match model");
      }
    }
  }
  adapter_ = std::move(adapter);
}

std::string Transformer::model_id() const {
  std::string bytes;
  params_.visit([&](const std::string&, const Tensor& t) { hash_into(bytes, t); });
  if (adapter_) {
    bytes += "|adapter|";
    adapter_->visit([&](const std::string& name, const Tensor& t) {
      bytes += name;
      hash_into(bytes, t);
    });
  }
  return cfg_.name + "@" + sha256_hex(bytes).substr(0, 16);
}

void Transformer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json meta = {{"format_version", kFormatVersion},
               {"name", cfg_.name},
               {"kind", std::string(to_string(cfg_.kind))},
               {"vocab_size", cfg_.vocab_size},
               {"block_size", cfg_.block_size},
               {"n_layer", cfg_.n_layer},
               {"n_head", cfg_.n_head},
               {"n_embd", cfg_.n_embd}};
  {
    std::ofstream out(dir / "model.json", std::ios::trunc);
    out << meta.dump(2) << '\n';
  }
  tok_.save(dir / "vocab.txt");
  std::ofstream out(dir / "weights.bin", std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + (dir / "weights.bin").string());
  write_tensors(out, params_);
  if (!out) throw Error("write failed for " + (dir / "weights.bin").string());
}

Transformer Transformer::load(const std::filesystem::path& dir) {
  const json meta = read_json(dir / "model.json");
  ModelConfig cfg;
  try {
    if (meta.at("format_version").get<int>() != kFormatVersion) {
      throw Error("unsupported model format in " + dir.string());
    }
    cfg.name = meta.at("name").get<std::string>();
    cfg.kind = parse_model_kind(meta.at("kind").get<std::string>());
    cfg.vocab_size = meta.at("vocab_size").get<std::size_t>();
    cfg.block_size = meta.at("block_size").get<std::size_t>();
    cfg.n_layer = meta.at("n_layer").get<std::size_t>();
    cfg.n_head = meta.at("n_head").get<std::size_t>();
    cfg.n_embd = meta.at("n_embd").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error("malformed model.json in " + dir.string() + ": " + e.what());
  }
  Tokenizer tok = Tokenizer::load(dir / "vocab.txt");
  if (tok.size() != cfg.vocab_size) {
    throw Error("vocabulary size does not match model.json in " + dir.string());
  }
  Transformer m(cfg, std::move(tok));
  read_tensors(dir / "weights.bin", m.params_);
  return m;
}

void Transformer::forward(std::span<const int> ids, Activations& act,
                          const ForwardOptions& options) const {
  const std::size_t T = ids.size();
  const std::size_t C = cfg_.n_embd;
  const std::size_t V = cfg_.vocab_size;
  if (T == 0) throw Error("empty input sequence");
  if (T > cfg_.block_size) {
    throw WindowOverflow("sequence of " + std::to_string(T) +
                         " tokens exceeds the context window of " +
                         std::to_string(cfg_.block_size));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw Error("token id out of range: " + std::to_string(id));
    }
  }

  act.seq = T;
  act.ids.assign(ids.begin(), ids.end());
  act.stream.resize(cfg_.n_layer + 1);
  act.blocks.resize(cfg_.n_layer);

  auto& x0 = act.stream[0];
  x0.assign(T * C, 0.0f);
  for (std::size_t t = 0; t < T; ++t) {
    const float* te = params_.wte.data.data() + static_cast<std::size_t>(ids[t]) * C;
    const float* pe = params_.wpe.data.data() + t * C;
    for (std::size_t c = 0; c < C; ++c) x0[t * C + c] = te[c] + pe[c];
  }

  const k::MatmulShape sq{T, C, C};
  const k::AttentionShape as{T, C, cfg_.n_head, cfg_.kind == ModelKind::decoder};
  const LoraParams* lora = adapter();
  const float lscale = lora ? lora->config.scale() : 0.0f;
  const float drop = (lora && options.train) ? lora->config.dropout : 0.0f;
  std::vector<float> tmp(T * C);

  auto adapt = [&](std::size_t layer, Projection proj, std::span<const float> in,
                   std::span<float> out, BlockActivations& ba) {
    const auto p = static_cast<std::size_t>(proj);
    if (!lora || lora->a[layer][p].empty()) return;
    const std::size_t R = lora->config.rank;
    auto& lin = ba.lora_in[p];
    auto& mid = ba.lora_mid[p];
    auto& mask = ba.lora_keep[p];
    lin.assign(in.begin(), in.end());
    mask.clear();
    if (drop > 0.0f) {
      mask.resize(lin.size());
      const float inv = 1.0f / (1.0f - drop);
      for (std::size_t i = 0; i < lin.size(); ++i) {
        mask[i] = keep(options.dropout_seed, layer, p, i, drop) ? 1 : 0;
        lin[i] = mask[i] ? lin[i] * inv : 0.0f;
      }
    }
    mid.assign(T * R, 0.0f);
    k::matmul_forward(mid, lin, lora->a[layer][p].data, {}, {T, C, R});
    k::matmul_forward(tmp, mid, lora->b[layer][p].data, {}, {T, R, C});
    for (std::size_t i = 0; i < T * C; ++i) out[i] += lscale * tmp[i];
  };

  for (std::size_t l = 0; l < cfg_.n_layer; ++l) {
    const auto& w = params_.blocks[l];
    auto& a = act.blocks[l];
    const auto& x = act.stream[l];
    a.ln1.resize(T * C);
    a.ln1_mean.resize(T);
    a.ln1_rstd.resize(T);
    k::layernorm_forward(a.ln1, a.ln1_mean, a.ln1_rstd, x, w.ln1_w.data,
                         w.ln1_b.data, T, C);
    a.q.resize(T * C);
    a.k.resize(T * C);
    a.v.resize(T * C);
    k::matmul_forward(a.q, a.ln1, w.q_w.data, w.q_b.data, sq);
    adapt(l, Projection::q, a.ln1, a.q, a);
    k::matmul_forward(a.k, a.ln1, w.k_w.data, w.k_b.data, sq);
    adapt(l, Projection::k, a.ln1, a.k, a);
    k::matmul_forward(a.v, a.ln1, w.v_w.data, w.v_b.data, sq);
    adapt(l, Projection::v, a.ln1, a.v, a);
    a.attn.resize(T * C);
    a.probs.resize(cfg_.n_head * T * T);
    k::attention_forward(a.attn, a.probs, a.q, a.k, a.v, as);

    std::vector<float> o(T * C);
    k::matmul_forward(o, a.attn, w.o_w.data, w.o_b.data, sq);
    adapt(l, Projection::o, a.attn, o, a);
    a.x_mid.resize(T * C);
    for (std::size_t i = 0; i < T * C; ++i) a.x_mid[i] = x[i] + o[i];

    a.ln2.resize(T * C);
    a.ln2_mean.resize(T);
    a.ln2_rstd.resize(T);
    k::layernorm_forward(a.ln2, a.ln2_mean, a.ln2_rstd, a.x_mid, w.ln2_w.data,
                         w.ln2_b.data, T, C);
    a.fc.resize(T * 4 * C);
    a.gelu.resize(T * 4 * C);
    k::matmul_forward(a.fc, a.ln2, w.fc_w.data, w.fc_b.data, {T, C, 4 * C});
    k::gelu_forward(a.gelu, a.fc);
    auto& next = act.stream[l + 1];
    next.resize(T * C);
    k::matmul_forward(next, a.gelu, w.proj_w.data, w.proj_b.data,
                      {T, 4 * C, C});
    for (std::size_t i = 0; i < T * C; ++i) next[i] += a.x_mid[i];
  }

  act.lnf.resize(T * C);
  act.lnf_mean.resize(T);
  act.lnf_rstd.resize(T);
  k::layernorm_forward(act.lnf, act.lnf_mean, act.lnf_rstd,
                       act.stream[cfg_.n_layer], params_.lnf_w.data,
                       params_.lnf_b.data, T, C);
}

void Transformer::backward(const Activations& act,
                           std::span<const float> dfinal,
                           TransformerParams* base, LoraParams* lora) const {
  const std::size_t T = act.seq;
  const std::size_t C = cfg_.n_embd;
  if (dfinal.size() != T * C) throw Error("dfinal has the wrong size");
  const LoraParams* adapter_params = adapter();
  if (lora && !adapter_params) throw Error("no adapter attached");

  auto grad = [&](Tensor TransformerParams::*member) -> std::span<float> {
    return base ? (base->*member).span() : std::span<float>();
  };
  auto bgrad = [&](std::size_t l, Tensor BlockParams::*member) -> std::span<float> {
    return base ? (base->blocks[l].*member).span() : std::span<float>();
  };

  std::vector<float> dx(T * C, 0.0f);
  k::layernorm_backward(dx, grad(&TransformerParams::lnf_w),
                        grad(&TransformerParams::lnf_b), dfinal,
                        act.stream[cfg_.n_layer], params_.lnf_w.data,
                        act.lnf_mean, act.lnf_rstd, T, C);

  const k::MatmulShape sq{T, C, C};
  const k::AttentionShape as{T, C, cfg_.n_head, cfg_.kind == ModelKind::decoder};
  const float lscale = adapter_params ? adapter_params->config.scale() : 0.0f;

  std::vector<float> dgelu(T * 4 * C), dfc(T * 4 * C), dln(T * C), dmid(T * C);
  std::vector<float> dattn(T * C), dq(T * C), dk(T * C), dv(T * C);
  std::vector<float> scaled(T * C), dlin(T * C), drank;

  // Adapter branch backward; adds the input gradient into `din`.
  auto adapt_back = [&](std::size_t l, Projection proj,
                        std::span<const float> dout, std::span<float> din) {
    const auto p = static_cast<std::size_t>(proj);
    if (!adapter_params || adapter_params->a[l][p].empty()) return;
    const auto& a = act.blocks[l];
    const std::size_t R = adapter_params->config.rank;
    for (std::size_t i = 0; i < T * C; ++i) scaled[i] = lscale * dout[i];
    drank.assign(T * R, 0.0f);
    std::span<float> dA, dB;
    if (lora) {
      dA = lora->a[l][p].span();
      dB = lora->b[l][p].span();
    }
    k::matmul_backward(drank, dB, {}, scaled, a.lora_mid[p],
                       adapter_params->b[l][p].data, {T, R, C});
    std::fill(dlin.begin(), dlin.end(), 0.0f);
    k::matmul_backward(dlin, dA, {}, drank, a.lora_in[p],
                       adapter_params->a[l][p].data, {T, C, R});
    const auto& mask = a.lora_keep[p];
    if (mask.empty()) {
      for (std::size_t i = 0; i < T * C; ++i) din[i] += dlin[i];
    } else {
      const float inv = 1.0f / (1.0f - adapter_params->config.dropout);
      for (std::size_t i = 0; i < T * C; ++i) {
        if (mask[i]) din[i] += dlin[i] * inv;
      }
    }
  };

  for (std::size_t l = cfg_.n_layer; l-- > 0;) {
    const auto& w = params_.blocks[l];
    const auto& a = act.blocks[l];
    // dx is the gradient w.r.t. stream[l + 1] = x_mid + mlp(ln2(x_mid)).
    std::fill(dgelu.begin(), dgelu.end(), 0.0f);
    k::matmul_backward(dgelu, bgrad(l, &BlockParams::proj_w),
                       bgrad(l, &BlockParams::proj_b), dx, a.gelu,
                       w.proj_w.data, {T, 4 * C, C});
    std::fill(dfc.begin(), dfc.end(), 0.0f);
    k::gelu_backward(dfc, a.fc, dgelu);
    std::fill(dln.begin(), dln.end(), 0.0f);
    k::matmul_backward(dln, bgrad(l, &BlockParams::fc_w),
                       bgrad(l, &BlockParams::fc_b), dfc, a.ln2, w.fc_w.data,
                       {T, C, 4 * C});
    dmid = dx;
    k::layernorm_backward(dmid, bgrad(l, &BlockParams::ln2_w),
                          bgrad(l, &BlockParams::ln2_b), dln, a.x_mid,
                          w.ln2_w.data, a.ln2_mean, a.ln2_rstd, T, C);

    // dmid is the gradient w.r.t. x_mid = x + o_proj(attn).
    std::fill(dattn.begin(), dattn.end(), 0.0f);
    k::matmul_backward(dattn, bgrad(l, &BlockParams::o_w),
                       bgrad(l, &BlockParams::o_b), dmid, a.attn, w.o_w.data,
                       sq);
    adapt_back(l, Projection::o, dmid, dattn);
    std::fill(dq.begin(), dq.end(), 0.0f);
    std::fill(dk.begin(), dk.end(), 0.0f);
    std::fill(dv.begin(), dv.end(), 0.0f);
    k::attention_backward(dq, dk, dv, dattn, a.probs, a.q, a.k, a.v, as);
    std::fill(dln.begin(), dln.end(), 0.0f);
    k::matmul_backward(dln, bgrad(l, &BlockParams::q_w),
                       bgrad(l, &BlockParams::q_b), dq, a.ln1, w.q_w.data, sq);
    adapt_back(l, Projection::q, dq, dln);
    k::matmul_backward(dln, bgrad(l, &BlockParams::k_w),
                       bgrad(l, &BlockParams::k_b), dk, a.ln1, w.k_w.data, sq);
    adapt_back(l, Projection::k, dk, dln);
    k::matmul_backward(dln, bgrad(l, &BlockParams::v_w),
                       bgrad(l, &BlockParams::v_b), dv, a.ln1, w.v_w.data, sq);
    adapt_back(l, Projection::v, dv, dln);
    dx = dmid;
    k::layernorm_backward(dx, bgrad(l, &BlockParams::ln1_w),
                          bgrad(l, &BlockParams::ln1_b), dln, act.stream[l],
                          w.ln1_w.data, a.ln1_mean, a.ln1_rstd, T, C);
  }

  if (base) {
    for (std::size_t t = 0; t < T; ++t) {
      float* te = base->wte.data.data() + static_cast<std::size_t>(act.ids[t]) * C;
      float* pe = base->wpe.data.data() + t * C;
      for (std::size_t c = 0; c < C; ++c) {
        te[c] += dx[t * C + c];
        pe[c] += dx[t * C + c];
      }
    }
  }
}

std::vector<double> Transformer::lm_head(const Activations& act,
                                         std::span<const std::size_t> positions,
                                         std::span<const int> targets,
                                         std::span<float> dfinal, Tensor* dwte,
                                         float scale) const {
  if (cfg_.kind != ModelKind::decoder) throw Error("LM head needs a decoder");
  if (positions.size() != targets.size()) {
    throw Error("positions and targets differ in length");
  }
  const std::size_t n = positions.size();
  const std::size_t C = cfg_.n_embd;
  const std::size_t V = cfg_.vocab_size;
  std::vector<double> logprobs(n);
  if (n == 0) return logprobs;

  std::vector<float> rows(n * C);
  for (std::size_t i = 0; i < n; ++i) {
    if (positions[i] >= act.seq) throw Error("LM head position out of range");
    std::memcpy(rows.data() + i * C, act.lnf.data() + positions[i] * C,
                C * sizeof(float));
  }
  std::vector<float> logits(n * V);
  k::matmul_forward(logits, rows, params_.wte.data, {}, {n, C, V});
  const bool want_grad = !dfinal.empty();
  std::vector<float> dlogits(want_grad ? n * V : 0, 0.0f);
  k::softmax_cross_entropy(logprobs, dlogits, logits, targets, n, V, scale);
  if (want_grad) {
    std::vector<float> drows(n * C, 0.0f);
    k::matmul_backward(drows, dwte ? dwte->span() : std::span<float>(), {},
                       dlogits, rows, params_.wte.data, {n, C, V});
    for (std::size_t i = 0; i < n; ++i) {
      float* dst = dfinal.data() + positions[i] * C;
      for (std::size_t c = 0; c < C; ++c) dst[c] += drows[i * C + c];
    }
  }
  return logprobs;
}

std::vector<float> Transformer::logits_at(const Activations& act,
                                          std::size_t position) const {
  if (position >= act.seq) throw Error("logit position out of range");
  const std::size_t C = cfg_.n_embd;
  std::vector<float> logits(cfg_.vocab_size);
  k::matmul_forward(logits,
                    std::span<const float>(act.lnf).subspan(position * C, C),
                    params_.wte.data, {}, {1, C, cfg_.vocab_size});
  return logits;
}

void save_adapter(const LoraParams& adapter, const std::string& base_model_id,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json targets = json::array();
  for (auto t : adapter.config.targets) targets.push_back(projection_name(t));
  json meta = {{"format_version", kFormatVersion},
               {"base_model", base_model_id},
               {"n_layer", adapter.a.size()},
               {"n_embd", adapter.a.empty() || adapter.config.targets.empty()
                              ? 0
                              : adapter.a[0][static_cast<std::size_t>(
                                                 adapter.config.targets[0])]
                                    .shape[1]},
               {"rank", adapter.config.rank},
               {"alpha", adapter.config.alpha},
               {"dropout", adapter.config.dropout},
               {"targets", targets}};
  {
    std::ofstream out(dir / "adapter.json", std::ios::trunc);
    out << meta.dump(2) << '\n';
  }
  std::ofstream out(dir / "adapter.bin", std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + (dir / "adapter.bin").string());
  write_tensors(out, adapter);
}

LoraParams load_adapter(const std::filesystem::path& dir,
                        std::string* base_model_id) {
  const json meta = read_json(dir / "adapter.json");
  LoraConfig cfg;
  ModelConfig shape;
  try {
    cfg.rank = meta.at("rank").get<std::size_t>();
    cfg.alpha = meta.at("alpha").get<float>();
    cfg.dropout = meta.at("dropout").get<float>();
    cfg.targets.clear();
    for (const auto& t : meta.at("targets")) {
      cfg.targets.push_back(parse_projection(t.get<std::string>()));
    }
    shape.n_layer = meta.at("n_layer").get<std::size_t>();
    shape.n_embd = meta.at("n_embd").get<std::size_t>();
    if (base_model_id) *base_model_id = meta.at("base_model").get<std::string>();
  } catch (const json::exception& e) {
    throw Error("malformed adapter.json in " + dir.string() + ": " + e.what());
  }
  LoraParams p = LoraParams::shaped(shape, cfg);
  read_tensors(dir / "adapter.bin", p);
  return p;
}

LoraParams initialize_adapter(const ModelConfig& model, const LoraConfig& cfg,
                              std::uint64_t seed) {
  LoraParams p = LoraParams::shaped(model, cfg);
  Rng rng(derive_seed(seed, "lora-init"));
  const double bound = 1.0 / std::sqrt(static_cast<double>(model.n_embd));
  for (auto& layer : p.a) {
    for (auto& t : layer) {
      for (auto& x : t.data) {
        x = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
      }
    }
  }
  return p;
}

LinearHead initialize_head(std::size_t classes, std::size_t dim,
                           std::uint64_t seed) {
  LinearHead h = LinearHead::shaped(classes, dim);
  Rng rng(derive_seed(seed, "head-init"));
  fill_normal(h.weight, rng, 0.02);
  return h;
}

}  // namespace probe
