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
#include <set>
#include <string>
#include <vector>

#include "probe/backend.hpp"
#include "probe/error.hpp"
#include "probe/random.hpp"
#include "probe/synth.hpp"
#include "probe/tuning.hpp"
#include "scratch_dir.hpp"

namespace {

probe::ModelConfig tiny_config(probe::ModelKind kind) {
  probe::ModelConfig cfg;
  cfg.kind = kind;
  cfg.n_layer = 2;
  cfg.n_embd = 16;
  cfg.n_head = 2;
  cfg.block_size = 32;
  return cfg;
}

std::vector<probe::LabeledText> first_word_task(std::size_t n, std::uint64_t seed) {
  probe::Rng rng(seed);
  const char* filler[] = {"river", "stone", "house", "bird", "hill", "sky"};
  std::vector<probe::LabeledText> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.below(2));
    std::string text = label ? "alpha" : "beta";
    for (int w = 0; w < 3; ++w) text += std::string(" ") + filler[rng.below(6)];
    out.push_back({"t-" + std::to_string(i), text, label});
  }
  return out;
}

probe::Tokenizer vocab_for(const std::vector<probe::LabeledText>& items) {
  std::vector<std::string> texts;
  for (const auto& x : items) texts.push_back(x.text);
  return probe::Tokenizer::build(texts);
}

probe::TrainingTrace trace_of(std::vector<double> dev_losses) {
  probe::TrainingTrace t;
  t.seed = 4;
  for (std::size_t i = 0; i < dev_losses.size(); ++i) {
    probe::TrainingPoint p;
    p.step = (i + 1) * 10;
    p.epoch = i + 1;
    p.train_loss = 1.0 / (i + 1);
    p.dev_loss = dev_losses[i];
    p.checkpoint = "epoch-" + std::to_string(i + 1);
    t.points.push_back(p);
  }
  return t;
}

std::vector<probe::SituationRecord> judgment_tokens_corpus(std::size_t n) {
  return probe::synth::judgment_corpus(n, 11);
}

probe::Tokenizer judgment_vocab(const std::vector<probe::SituationRecord>& records) {
  std::vector<std::string> texts;
  const auto s = probe::PromptStrategy::of(probe::StrategyName::judg);
  for (const auto& r : records) {
    texts.push_back(probe::render_prompt(r, s, probe::RenderStage::train));
  }
  return probe::Tokenizer::build(texts);
}

}  // namespace

TEST_CASE("AdamW matches a hand-computed two-step update") {
  probe::Tensor p, g;
  p.data = {1.0f, -2.0f};
  g.data = {0.5f, 0.0f};
  probe::AdamW opt({});
  opt.add(&p, &g, 0.1, 0.01);
  opt.step();
  CHECK(p.data[0] == doctest::Approx(0.899).epsilon(1e-6));
  CHECK(p.data[1] == doctest::Approx(-2.0 * 0.999).epsilon(1e-6));
  g.data = {-0.5f, 0.0f};
  opt.step();
  // m = -0.005, v = 0.00049975; bias-corrected update = -0.005/0.19 / 0.5.
  CHECK(p.data[0] == doctest::Approx(0.899 * 0.999 + 0.1 * (0.005 / 0.19) / 0.5).epsilon(1e-6));
  CHECK(opt.steps() == 2);
  opt.zero_grad();
  CHECK(g.data[0] == 0.0f);
}

TEST_CASE("weight decay skips biases and norms but not adapters") {
  CHECK(probe::decays("h0.q_w"));
  CHECK(probe::decays("wte"));
  CHECK(probe::decays("h1.q_proj.lora_a"));
  CHECK(probe::decays("h1.q_proj.lora_b"));
  CHECK_FALSE(probe::decays("h0.q_b"));
  CHECK_FALSE(probe::decays("h0.ln1_w"));
  CHECK_FALSE(probe::decays("lnf_w"));
  CHECK_FALSE(probe::decays("head.bias"));
}

TEST_CASE("best checkpoint is the dev-loss argmin with earliest ties") {
  CHECK(probe::select_best_checkpoint(trace_of({0.9, 0.7})) == 1);
  CHECK(probe::select_best_checkpoint(trace_of({0.5, 0.7, 0.5})) == 0);
  auto t = trace_of({0.8, 0.3, 0.6});
  probe::finalize_trace(t);
  CHECK(t.best_index == 1);
  CHECK(t.best_checkpoint == "epoch-2");
  CHECK(t.best_dev_loss == 0.3);
  const auto once = t.best_index;
  probe::finalize_trace(t);
  CHECK(t.best_index == once);
  CHECK_THROWS_AS(probe::select_best_checkpoint(trace_of({})), probe::Error);
}

TEST_CASE("best checkpoint property: never beaten, never preceded by an equal") {
  probe::Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> losses(1 + rng.below(12));
    for (auto& x : losses) x = static_cast<double>(rng.below(5)) / 4.0;
    const auto best = probe::select_best_checkpoint(trace_of(losses));
    for (std::size_t i = 0; i < losses.size(); ++i) {
      CHECK(losses[best] <= losses[i]);
      if (i < best) CHECK(losses[i] > losses[best]);
    }
  }
}

TEST_CASE("trace JSONL round trip") {
  ScratchDir dir("trace");
  auto t = trace_of({0.8, 0.4});
  t.points[1].dev_acc = 0.75;
  t.points[0].train_acc = 0.5;
  probe::finalize_trace(t);
  probe::write_trace_jsonl(dir.path() / "trace.jsonl", t);
  const auto back = probe::read_trace_jsonl(dir.path() / "trace.jsonl");
  REQUIRE(back.points.size() == 2);
  CHECK(back.seed == 4);
  CHECK(back.best_checkpoint == "epoch-2");
  CHECK(back.points[1].dev_acc == 0.75);
  CHECK(back.points[0].train_acc == 0.5);
  CHECK_FALSE(back.points[0].dev_acc.has_value());
  CHECK(back.points[1].dev_loss == t.points[1].dev_loss);
}

TEST_CASE("classifier config validation and JSON round trip") {
  probe::ClassifierConfig c;
  CHECK(c.backbone_lr == 5e-5);
  CHECK(c.head_lr == 1e-2);
  CHECK(c.epsilon == 1e-3);
  CHECK(c.seeds.size() == 5);
  c.max_epochs = 4;
  const auto back = probe::classifier_config_from_json(probe::to_json(c));
  CHECK(probe::to_json(back) == probe::to_json(c));
  c.seeds.clear();
  CHECK_THROWS_AS(c.validate(), probe::ConfigError);
  probe::ClassifierConfig d;
  d.beta2 = 1.0;
  CHECK_THROWS_AS(d.validate(), probe::ConfigError);
}

TEST_CASE("classifier fits a separable task and stays at chance on random dev labels") {
  const auto train = first_word_task(120, 1);
  auto dev = first_word_task(200, 2);
  probe::Rng coin(9);
  for (auto& x : dev) x.label = static_cast<int>(coin.below(2));
  const auto enc = probe::Transformer::initialize(tiny_config(probe::ModelKind::encoder),
                                                  vocab_for(train), 1);
  probe::ClassifierConfig c;
  c.backbone_lr = 1e-3;
  c.max_epochs = 6;
  c.seeds = {1, 2};
  const auto traces = probe::train_classifier(enc, train, dev, 2, c);
  REQUIRE(traces.size() == 2);
  for (const auto& t : traces) {
    CHECK(t.points.size() == 6);
    CHECK(*t.points.back().train_acc == 1.0);
    CHECK(*t.points.back().dev_acc > 0.35);
    CHECK(*t.points.back().dev_acc < 0.65);
    CHECK(t.points[t.best_index].dev_loss == t.best_dev_loss);
  }
  CHECK(traces[0].seed == 1);
  const auto again = probe::train_classifier(enc, train, dev, 2, c);
  CHECK(again[1].points.back().dev_loss == traces[1].points.back().dev_loss);
}

TEST_CASE("size progression and convergence sweep shape") {
  const auto sizes = probe::size_progression(1000, 20000, 2000);
  REQUIRE(sizes.size() == 10);
  CHECK(sizes.front() == 1000);
  CHECK(sizes.back() == 19000);
  CHECK(probe::size_progression(2, 10, 4) == std::vector<std::size_t>{2, 6, 10});

  const auto pool = first_word_task(60, 3);
  const auto dev = first_word_task(30, 4);
  const auto enc = probe::Transformer::initialize(tiny_config(probe::ModelKind::encoder),
                                                  vocab_for(pool), 2);
  probe::ClassifierConfig c;
  c.max_epochs = 2;
  c.seeds = {1, 2};
  const std::vector<std::size_t> grid{20, 40};
  const auto curve = probe::convergence_sweep(enc, pool, dev, grid, 2, c);
  REQUIRE(curve.size() == 2);
  for (const auto& p : curve) {
    REQUIRE(p.best_dev_acc.size() == 2);
    CHECK(p.mean_best_dev_acc ==
          doctest::Approx((p.best_dev_acc[0] + p.best_dev_acc[1]) / 2.0));
    for (const double a : p.best_dev_acc) CHECK((a >= 0.0 && a <= 1.0));
  }
  CHECK(curve[1].size == 40);
  const std::vector<std::size_t> too_big{61};
  CHECK_THROWS_AS(probe::convergence_sweep(enc, pool, dev, too_big, 2, c), probe::Error);
}

TEST_CASE("SFT config validation and JSON round trip") {
  probe::SftConfig c;
  CHECK(c.mode == probe::TuneMode::lora);
  CHECK(c.lora.rank == 64);
  CHECK(c.lora.alpha == 16.0f);
  CHECK(c.batch_size == 16);
  CHECK(c.lr == 5e-5);
  c.strategy = probe::PromptStrategy::of(probe::StrategyName::rot_judg);
  c.max_steps = 7;
  const auto back = probe::sft_config_from_json(probe::to_json(c));
  CHECK(probe::to_json(back) == probe::to_json(c));
  CHECK(back.strategy.name == probe::StrategyName::rot_judg);
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), probe::ConfigError);
  CHECK(probe::parse_tune_mode("full") == probe::TuneMode::full);
  CHECK_THROWS(probe::parse_tune_mode("partial"));
}

TEST_CASE("masked loss equals the conditional likelihood of the target") {
  const auto records = judgment_tokens_corpus(6);
  const probe::ModelHandle h(std::make_shared<probe::Transformer>(probe::Transformer::initialize(
      tiny_config(probe::ModelKind::decoder), judgment_vocab(records), 3)));
  const auto s = probe::PromptStrategy::of(probe::StrategyName::judg);
  const auto ex = probe::render_sft_examples(h, records, s, false);
  REQUIRE(ex.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto rec = probe::conditional_likelihood(
        h, probe::render_prompt(records[i], s, probe::RenderStage::inference_prefix),
        probe::render_target_portion(records[i], s));
    const double mean = -rec.sum_logprob / static_cast<double>(rec.token_logprobs.size());
    CHECK(probe::lm_loss(h.model(), std::span(ex).subspan(i, 1)) ==
          doctest::Approx(mean).epsilon(1e-5));
  }
  const auto with_eos = probe::render_sft_examples(h, records, s, true);
  CHECK(with_eos[0].target.size() == ex[0].target.size() + 1);
  CHECK(with_eos[0].target.back() == probe::Tokenizer::kEos);
}

TEST_CASE("SFT raises the likelihood of gold targets and writes ordered checkpoints") {
  ScratchDir dir("sft");
  const auto records = judgment_tokens_corpus(50);
  const auto dev = probe::synth::judgment_corpus(10, 11, 50);
  const probe::ModelHandle base(std::make_shared<probe::Transformer>(probe::Transformer::initialize(
      tiny_config(probe::ModelKind::decoder), judgment_vocab(records), 4)));
  probe::SftConfig c;
  c.mode = probe::TuneMode::full;
  c.lr = 3e-3;
  c.epochs = 4;
  c.eval_every = 5;
  const auto result = probe::sft_train(base, records, dev, c, dir.path());
  const probe::ModelHandle tuned(result.model);

  std::size_t raised = 0;
  for (const auto& r : records) {
    const auto prefix = probe::render_prompt(r, c.strategy, probe::RenderStage::inference_prefix);
    const auto target = probe::render_target_portion(r, c.strategy);
    raised += probe::conditional_likelihood(tuned, prefix, target).norm_prob >
              probe::conditional_likelihood(base, prefix, target).norm_prob;
  }
  CHECK(raised >= 45);

  const auto& trace = result.trace;
  REQUIRE(trace.points.size() == 4);  // 16 steps: evaluations at 5, 10, 15 and 16
  CHECK(trace.points.back().step == 16);
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir.path() / "checkpoints")) {
    names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  REQUIRE(names.size() == trace.points.size());
  for (std::size_t i = 0; i < names.size(); ++i) CHECK(names[i] == trace.points[i].checkpoint);
  CHECK(probe::lm_loss(*result.model, probe::render_sft_examples(base, dev, c.strategy, true)) ==
        doctest::Approx(trace.best_dev_loss).epsilon(1e-9));

  const auto reloaded = probe::ModelHandle::load(dir.path() / "checkpoints" / trace.best_checkpoint);
  CHECK(reloaded.model_id() == tuned.model_id());
}

TEST_CASE("LoRA training leaves the base weights untouched") {
  const auto records = judgment_tokens_corpus(20);
  const auto base = probe::Transformer::initialize(tiny_config(probe::ModelKind::decoder),
                                                   judgment_vocab(records), 5);
  const probe::ModelHandle h(std::make_shared<probe::Transformer>(base));
  probe::SftConfig c;
  c.lora.rank = 4;
  c.lr = 1e-2;
  c.max_steps = 3;
  const auto result = probe::sft_train(h, records, records, c);
  REQUIRE(result.model->adapter() != nullptr);
  CHECK(result.model->params().wte.data == base.params().wte.data);
  CHECK(result.model->params().blocks[0].q_w.data == base.params().blocks[0].q_w.data);
}

TEST_CASE("generation evaluation scores the parsed final field") {
  const auto records = judgment_tokens_corpus(30);
  const probe::ModelHandle base(std::make_shared<probe::Transformer>(probe::Transformer::initialize(
      tiny_config(probe::ModelKind::decoder), judgment_vocab(records), 6)));
  probe::SftConfig c;
  c.mode = probe::TuneMode::full;
  c.lr = 3e-3;
  c.epochs = 6;
  const probe::ModelHandle tuned(probe::sft_train(base, records, records, c).model);
  const auto embed = probe::model_embedder(tuned, tuned.num_layers());
  std::vector<probe::GenerationRecord> out;
  const auto report = probe::evaluate_generation(tuned, records, c.strategy, embed, {}, &out);
  REQUIRE(out.size() == records.size());
  CHECK(report.n_items == records.size());
  CHECK(report.metadata.at("strategy") == "judg");
  CHECK(report.metadata.at("model_id") == tuned.model_id());
  std::vector<probe::GenerationPair> pairs;
  for (const auto& g : out) {
    CHECK(g.gold == records[&g - out.data()].judgment);
    const auto it = g.fields.find(probe::Field::judgment);
    pairs.push_back({it == g.fields.end() ? "" : it->second, g.gold});
  }
  const auto direct = probe::score_pairs(pairs, embed);
  CHECK(report.rouge1 == doctest::Approx(direct.rouge1));
  CHECK(report.embedding_f1 == doctest::Approx(direct.embedding_f1));
  CHECK(report.rouge1 > 0.9);
  CHECK_THROWS_AS(probe::evaluate_generation(tuned, {}, c.strategy, embed), probe::Error);
}

TEST_CASE("pretraining examples chunk one EOS-joined stream") {
  const std::vector<std::string> texts{"a b c", "d e", "f"};
  const auto tok = probe::Tokenizer::build(texts);
  const auto ex = probe::pretraining_examples(tok, texts, 4);
  std::vector<int> joined;
  for (const auto& e : ex) {
    CHECK(e.context == std::vector<int>{probe::Tokenizer::kBos});
    CHECK(e.target.size() <= 4);
    joined.insert(joined.end(), e.target.begin(), e.target.end());
  }
  std::vector<int> expect;
  for (const auto& t : texts) {
    const auto ids = tok.encode(t);
    expect.insert(expect.end(), ids.begin(), ids.end());
    expect.push_back(probe::Tokenizer::kEos);
  }
  CHECK(joined == expect);
  CHECK_THROWS_AS(probe::pretraining_examples(tok, texts, 1), probe::Error);
}
