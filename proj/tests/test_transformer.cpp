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

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "oracle.hpp"
#include "probe/error.hpp"
#include "probe/random.hpp"
#include "probe/transformer.hpp"

namespace {

probe::Tokenizer small_vocab() {
  std::vector<std::string> texts{"a b c d e f g h . , you should not"};
  return probe::Tokenizer::build(texts);
}

probe::Transformer small_model(probe::ModelKind kind, std::uint64_t seed) {
  probe::ModelConfig cfg;
  cfg.kind = kind;
  cfg.block_size = 12;
  cfg.n_layer = 2;
  cfg.n_head = 2;
  cfg.n_embd = 8;
  auto m = probe::Transformer::initialize(cfg, small_vocab(), seed);
  // Larger weights than the default init so that every path carries signal.
  probe::Rng rng(seed + 100);
  m.params().visit([&](const std::string& name, probe::Tensor& t) {
    if (name.find("ln") != std::string::npos) {
      for (auto& x : t.data) x += static_cast<float>(0.2 * rng.normal());
    } else {
      for (auto& x : t.data) x = static_cast<float>(0.3 * rng.normal());
    }
  });
  return m;
}

void randomize_adapter(probe::LoraParams& lora, std::uint64_t seed) {
  probe::Rng rng(seed);
  lora.visit([&](const std::string&, probe::Tensor& t) {
    for (auto& x : t.data) x = static_cast<float>(0.3 * rng.normal());
  });
}

// Scalar objective for gradient checks: sum of final-norm outputs weighted
// by fixed random coefficients, plus the LM loss for decoders.
struct Objective {
  std::vector<int> ids;
  std::vector<double> weights;
  std::vector<std::size_t> positions;
  std::vector<int> targets;

  double oracle_value(const probe::Transformer& m) const {
    const auto r = oracle::forward(m, ids);
    const std::size_t C = m.config().n_embd;
    double v = 0.0;
    for (std::size_t t = 0; t < ids.size(); ++t) {
      for (std::size_t c = 0; c < C; ++c) v += weights[t * C + c] * r.final_norm[t][c];
    }
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto lp = oracle::log_softmax_logits(m, r.final_norm[positions[i]]);
      v -= lp[static_cast<std::size_t>(targets[i])];
    }
    return v;
  }
};

Objective make_objective(const probe::Transformer& m, bool with_lm) {
  Objective o;
  o.ids = {1, 4, 7, 5, 9, 6};
  probe::Rng rng(77);
  o.weights.resize(o.ids.size() * m.config().n_embd);
  for (auto& w : o.weights) w = rng.normal();
  if (with_lm) {
    o.positions = {1, 2, 4};
    o.targets = {7, 5, 10};
  }
  return o;
}

void analytic(const probe::Transformer& m, const Objective& o,
              probe::TransformerParams* base, probe::LoraParams* lora) {
  probe::Activations act;
  m.forward(o.ids, act);
  std::vector<float> dfinal(o.weights.begin(), o.weights.end());
  probe::Tensor* dwte = base ? &base->wte : nullptr;
  if (!o.positions.empty()) {
    m.lm_head(act, o.positions, o.targets, dfinal, dwte, 1.0f);
  }
  m.backward(act, dfinal, base, lora);
}

// Central differences through the double precision oracle.
double numeric(probe::Transformer& m, const Objective& o, float& weight) {
  const float saved = weight;
  const float h = 1e-3f;
  weight = saved + h;
  const double up = o.oracle_value(m);
  const double dup = static_cast<double>(weight) - saved;
  weight = saved - h;
  const double down = o.oracle_value(m);
  const double ddown = saved - static_cast<double>(weight);
  weight = saved;
  return (up - down) / (dup + ddown);
}

void check_gradient(double analytic_value, double numeric_value, const std::string& name) {
  INFO(name << " analytic=" << analytic_value << " numeric=" << numeric_value);
  CHECK(std::abs(analytic_value - numeric_value) <=
        2e-3 + 2e-3 * std::abs(numeric_value));
}

}  // namespace

TEST_CASE("forward matches the independent double precision oracle") {
  for (auto kind : {probe::ModelKind::decoder, probe::ModelKind::encoder}) {
    auto m = small_model(kind, 3);
    auto lora = probe::initialize_adapter(m.config(), {4, 8.0f, 0.0f, {probe::Projection::q, probe::Projection::o}}, 5);
    randomize_adapter(lora, 6);
    m.attach_adapter(lora);
    const std::vector<int> ids{1, 5, 6, 7, 3, 8};
    probe::Activations act;
    m.forward(ids, act);
    const auto ref = oracle::forward(m, ids);
    const std::size_t C = m.config().n_embd;
    for (std::size_t l = 0; l <= m.config().n_layer; ++l) {
      for (std::size_t t = 0; t < ids.size(); ++t) {
        for (std::size_t c = 0; c < C; ++c) {
          CHECK(act.stream[l][t * C + c] == doctest::Approx(ref.stream[l][t][c]).epsilon(1e-4));
        }
      }
    }
    for (std::size_t t = 0; t < ids.size(); ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        CHECK(act.lnf[t * C + c] == doctest::Approx(ref.final_norm[t][c]).epsilon(1e-4));
      }
    }
  }
}

TEST_CASE("base parameter gradients match finite differences") {
  for (auto kind : {probe::ModelKind::decoder, probe::ModelKind::encoder}) {
    auto m = small_model(kind, 11);
    const auto obj = make_objective(m, kind == probe::ModelKind::decoder);
    auto grads = probe::TransformerParams::shaped(m.config());
    analytic(m, obj, &grads, nullptr);

    std::vector<std::pair<std::string, probe::Tensor*>> names;
    grads.visit([&](const std::string& n, probe::Tensor& t) { names.emplace_back(n, &t); });
    std::vector<probe::Tensor*> weights;
    m.params().visit([&](const std::string&, probe::Tensor& t) { weights.push_back(&t); });
    probe::Rng pick(5);
    for (std::size_t i = 0; i < names.size(); ++i) {
      for (int trial = 0; trial < 3; ++trial) {
        std::size_t idx = pick.below(weights[i]->size());
        // Token and position rows that never occur have zero gradient; bias
        // the pick toward used rows.
        if (names[i].first == "wte") idx = static_cast<std::size_t>(obj.ids[trial + 1]) * m.config().n_embd + pick.below(m.config().n_embd);
        if (names[i].first == "wpe") idx = pick.below(obj.ids.size() * m.config().n_embd);
        const double num = numeric(m, obj, weights[i]->data[idx]);
        check_gradient(names[i].second->data[idx], num, names[i].first + "[" + std::to_string(idx) + "]");
      }
    }
  }
}

TEST_CASE("adapter gradients match finite differences and base stays frozen") {
  auto m = small_model(probe::ModelKind::decoder, 21);
  probe::LoraConfig lc{3, 6.0f, 0.0f, {probe::Projection::q, probe::Projection::k, probe::Projection::v, probe::Projection::o}};
  auto lora = probe::initialize_adapter(m.config(), lc, 1);
  randomize_adapter(lora, 2);
  m.attach_adapter(lora);
  const auto obj = make_objective(m, true);
  auto grads = probe::LoraParams::shaped(m.config(), lc);
  analytic(m, obj, nullptr, &grads);

  std::vector<std::pair<std::string, probe::Tensor*>> g;
  grads.visit([&](const std::string& n, probe::Tensor& t) { g.emplace_back(n, &t); });
  std::vector<probe::Tensor*> w;
  m.adapter()->visit([&](const std::string&, probe::Tensor& t) { w.push_back(&t); });
  REQUIRE(g.size() == w.size());
  probe::Rng pick(9);
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (int trial = 0; trial < 3; ++trial) {
      const std::size_t idx = pick.below(w[i]->size());
      const double num = numeric(m, obj, w[i]->data[idx]);
      check_gradient(g[i].second->data[idx], num, g[i].first);
    }
  }
}

TEST_CASE("fresh adapter leaves outputs unchanged") {
  auto m = small_model(probe::ModelKind::decoder, 4);
  const std::vector<int> ids{1, 4, 5, 6};
  probe::Activations a, b;
  m.forward(ids, a);
  m.attach_adapter(probe::initialize_adapter(m.config(), {}, 3));
  m.forward(ids, b, {true, 99});
  CHECK(a.lnf == b.lnf);
}

TEST_CASE("adapter dropout is a pure function of the seed") {
  auto m = small_model(probe::ModelKind::decoder, 4);
  auto lora = probe::initialize_adapter(m.config(), {4, 8.0f, 0.5f, {probe::Projection::v}}, 3);
  randomize_adapter(lora, 8);
  m.attach_adapter(lora);
  const std::vector<int> ids{1, 4, 5, 6};
  probe::Activations a, b, c, eval;
  m.forward(ids, a, {true, 1});
  m.forward(ids, b, {true, 1});
  m.forward(ids, c, {true, 2});
  m.forward(ids, eval);
  CHECK(a.lnf == b.lnf);
  CHECK(a.lnf != c.lnf);
  CHECK(a.lnf != eval.lnf);
}

TEST_CASE("window overflow is rejected, not truncated") {
  auto m = small_model(probe::ModelKind::decoder, 1);
  std::vector<int> ids(m.config().block_size + 1, 4);
  probe::Activations act;
  CHECK_THROWS_AS(m.forward(ids, act), probe::WindowOverflow);
}

TEST_CASE("checkpoint and adapter round trip preserves weights and model id") {
  const auto dir = std::filesystem::temp_directory_path() / "probe_test_ckpt";
  std::filesystem::remove_all(dir);
  auto m = small_model(probe::ModelKind::decoder, 2);
  m.save(dir / "model");
  auto loaded = probe::Transformer::load(dir / "model");
  CHECK(loaded.model_id() == m.model_id());
  CHECK(loaded.params().blocks[1].fc_w.data == m.params().blocks[1].fc_w.data);

  auto lora = probe::initialize_adapter(m.config(), {2, 4.0f, 0.1f, {probe::Projection::k}}, 4);
  randomize_adapter(lora, 5);
  probe::save_adapter(lora, m.model_id(), dir / "adapter");
  std::string base;
  auto back = probe::load_adapter(dir / "adapter", &base);
  CHECK(base == m.model_id());
  CHECK(back.config.rank == 2);
  CHECK(back.targets(probe::Projection::k));
  CHECK_FALSE(back.targets(probe::Projection::q));
  CHECK(back.a[1][1].data == lora.a[1][1].data);
  m.attach_adapter(lora);
  CHECK(m.model_id() != loaded.model_id());
  std::filesystem::remove_all(dir);
}

TEST_CASE("unknown adapter target names are rejected") {
  CHECK_THROWS_AS(probe::parse_projection("gate_proj"), probe::ConfigError);
  CHECK(probe::parse_projection("o_proj") == probe::Projection::o);
}
