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

#include "probe/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "probe/error.hpp"
#include "probe/log.hpp"
#include "probe/parallel.hpp"
#include "probe/random.hpp"

namespace probe {

using json = nlohmann::json;

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

// Registers every tensor of `params` with its gradient twin in `grads`.
template <class P>
void register_params(AdamW& opt, P& params, P& grads, double lr, double weight_decay) {
  std::vector<std::pair<std::string, Tensor*>> p, g;
  params.visit([&](const std::string& name, Tensor& t) { p.emplace_back(name, &t); });
  grads.visit([&](const std::string& name, Tensor& t) { g.emplace_back(name, &t); });
  for (std::size_t i = 0; i < p.size(); ++i) {
    opt.add(p[i].second, g[i].second, lr, decays(p[i].first) ? weight_decay : 0.0);
  }
}

std::string step_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step-%06zu", step);
  return buf;
}

// ---- classification ----

struct Encoded {
  std::vector<int> ids;
  int label;
};

std::vector<Encoded> encode_labeled(const Transformer& model, std::span<const LabeledText> data,
                                    std::size_t num_classes, const char* split) {
  if (data.empty()) throw Error(std::string("empty ") + split + " split");
  std::vector<Encoded> out;
  out.reserve(data.size());
  for (const auto& d : data) {
    if (d.label < 0 || static_cast<std::size_t>(d.label) >= num_classes) {
      throw Error("label " + std::to_string(d.label) + " of '" + d.id + "' outside 0.." +
                  std::to_string(num_classes - 1));
    }
    std::vector<int> ids{Tokenizer::kBos};
    const auto body = model.tokenizer().encode(d.text);
    ids.insert(ids.end(), body.begin(), body.end());
    if (ids.size() > model.config().block_size) {
      throw WindowOverflow("'" + d.id + "' needs " + std::to_string(ids.size()) +
                           " tokens, window is " + std::to_string(model.config().block_size));
    }
    out.push_back({std::move(ids), d.label});
  }
  return out;
}

// Logits of the head over the first final-norm row.
std::vector<double> head_logits(const LinearHead& head, std::span<const float> pooled) {
  const std::size_t K = head.classes(), C = head.dim();
  std::vector<double> logits(K);
  for (std::size_t k = 0; k < K; ++k) {
    double acc = head.bias.data[k];
    for (std::size_t c = 0; c < C; ++c) acc += static_cast<double>(head.weight.data[k * C + c]) * pooled[c];
    logits[k] = acc;
  }
  return logits;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(logits[i] - mx);
  for (auto& x : p) x /= z;
  return p;
}

struct EvalStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalStats evaluate_classifier(const Transformer& model, const LinearHead& head,
                              std::span<const Encoded> data) {
  std::vector<double> loss(data.size());
  std::vector<char> correct(data.size());
  const std::size_t C = model.config().n_embd;
  parallel_for(data.size(), [&](std::size_t i) {
    Activations act;
    model.forward(data[i].ids, act);
    const auto p = softmax(head_logits(head, std::span<const float>(act.lnf).first(C)));
    loss[i] = -std::log(std::max(p[static_cast<std::size_t>(data[i].label)], 1e-300));
    correct[i] = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) ==
                 data[i].label;
  });
  EvalStats s;
  for (std::size_t i = 0; i < data.size(); ++i) {
    s.loss += loss[i];
    s.accuracy += correct[i] ? 1.0 : 0.0;
  }
  s.loss /= static_cast<double>(data.size());
  s.accuracy /= static_cast<double>(data.size());
  return s;
}

TrainingTrace train_classifier_seed(const Transformer& encoder, std::span<const Encoded> train,
                                    std::span<const Encoded> dev, std::size_t num_classes,
                                    const ClassifierConfig& cfg, std::uint64_t seed) {
  Transformer model = encoder;
  const auto& mc = model.config();
  const std::size_t C = mc.n_embd;
  LinearHead head = initialize_head(num_classes, C, derive_seed(seed, "classifier-head"));
  TransformerParams grads = TransformerParams::shaped(mc);
  LinearHead head_grads = LinearHead::shaped(num_classes, C);

  AdamW opt({cfg.beta1, cfg.beta2, cfg.epsilon});
  register_params(opt, model.params(), grads, cfg.backbone_lr, cfg.weight_decay);
  opt.add(&head.weight, &head_grads.weight, cfg.head_lr, cfg.weight_decay);
  opt.add(&head.bias, &head_grads.bias, cfg.head_lr, 0.0);

  std::vector<Encoded> train_eval(train.begin(), train.end());
  if (cfg.train_eval_limit && train_eval.size() > cfg.train_eval_limit) {
    const auto order = permutation(train_eval.size(), derive_seed(seed, "train-eval"));
    std::vector<Encoded> subset;
    for (std::size_t i = 0; i < cfg.train_eval_limit; ++i) subset.push_back(train[order[i]]);
    train_eval = std::move(subset);
  }

  TrainingTrace trace;
  trace.seed = seed;
  Activations act;
  std::vector<float> dfinal;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = permutation(train.size(), derive_seed(derive_seed(seed, "epoch"), epoch));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const auto& ex = train[order[b]];
        model.forward(ex.ids, act);
        const auto pooled = std::span<const float>(act.lnf).first(C);
        auto p = softmax(head_logits(head, pooled));
        epoch_loss += -std::log(std::max(p[static_cast<std::size_t>(ex.label)], 1e-300));
        p[static_cast<std::size_t>(ex.label)] -= 1.0;
        dfinal.assign(act.seq * C, 0.0f);
        for (std::size_t k = 0; k < num_classes; ++k) {
          const float d = static_cast<float>(p[k] * inv_b);
          head_grads.bias.data[k] += d;
          for (std::size_t c = 0; c < C; ++c) {
            head_grads.weight.data[k * C + c] += d * pooled[c];
            dfinal[c] += d * head.weight.data[k * C + c];
          }
        }
        model.backward(act, dfinal, &grads, nullptr);
      }
      opt.step();
      opt.zero_grad();
    }
    TrainingPoint point;
    point.step = opt.steps();
    point.epoch = epoch;
    point.train_loss = epoch_loss / static_cast<double>(train.size());
    const auto d = evaluate_classifier(model, head, dev);
    point.dev_loss = d.loss;
    point.dev_acc = d.accuracy;
    point.train_acc = evaluate_classifier(model, head, train_eval).accuracy;
    point.checkpoint = "epoch-" + std::to_string(epoch);
    trace.points.push_back(point);
    log_debug("classifier seed " + std::to_string(seed) + " epoch " + std::to_string(epoch) +
              " dev_acc " + std::to_string(d.accuracy));
  }
  finalize_trace(trace);
  return trace;
}

// ---- language modelling ----

struct LmSnapshot {
  std::optional<TransformerParams> base;
  std::optional<LoraParams> adapter;
};

void check_examples(std::span<const LmExample> examples, std::size_t window, const char* split) {
  for (const auto& e : examples) {
    if (e.context.empty()) throw Error(std::string(split) + " example without context");
    if (e.target.empty()) throw Error(std::string(split) + " example without target tokens");
    if (e.context.size() + e.target.size() - 1 > window) {
      throw WindowOverflow(std::string(split) + " example needs " +
                           std::to_string(e.context.size() + e.target.size() - 1) +
                           " tokens, window is " + std::to_string(window));
    }
  }
}

// Input ids and the (position, target) pairs the loss covers.
void lm_inputs(const LmExample& e, std::vector<int>& ids, std::vector<std::size_t>& positions) {
  ids = e.context;
  ids.insert(ids.end(), e.target.begin(), e.target.end() - 1);
  positions.resize(e.target.size());
  for (std::size_t i = 0; i < e.target.size(); ++i) positions[i] = e.context.size() - 1 + i;
}

}  // namespace

void AdamW::add(Tensor* param, Tensor* grad, double lr, double weight_decay) {
  if (param->size() != grad->size()) throw Error("parameter and gradient sizes differ");
  slots_.push_back({param, grad, lr, weight_decay, std::vector<float>(param->size(), 0.0f),
                    std::vector<float>(param->size(), 0.0f)});
}

void AdamW::step() {
  ++t_;
  const double b1 = hyper_.beta1, b2 = hyper_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (auto& s : slots_) {
    float* p = s.param->data.data();
    const float* g = s.grad->data.data();
    const auto n = static_cast<std::ptrdiff_t>(s.param->size());
    const double decay = 1.0 - s.lr * s.weight_decay;
#pragma omp parallel for if (n >= 65536) schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const double gi = g[i];
      const double m = b1 * s.m[i] + (1.0 - b1) * gi;
      const double v = b2 * s.v[i] + (1.0 - b2) * gi * gi;
      s.m[i] = static_cast<float>(m);
      s.v[i] = static_cast<float>(v);
      const double update = (m / bc1) / (std::sqrt(v / bc2) + hyper_.epsilon);
      p[i] = static_cast<float>(p[i] * decay - s.lr * update);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& s : slots_) s.grad->zero();
}

bool decays(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  if (leaf.starts_with("lora_")) return true;
  if (leaf.ends_with("_b")) return false;
  if (leaf.starts_with("ln")) return false;
  return leaf != "bias";
}

std::size_t select_best_checkpoint(const TrainingTrace& trace) {
  if (trace.points.empty()) throw Error("no evaluation point recorded");
  std::size_t best = 0;
  for (std::size_t i = 1; i < trace.points.size(); ++i) {
    if (trace.points[i].dev_loss < trace.points[best].dev_loss) best = i;
  }
  return best;
}

void finalize_trace(TrainingTrace& trace) {
  trace.best_index = select_best_checkpoint(trace);
  trace.best_dev_loss = trace.points[trace.best_index].dev_loss;
  trace.best_checkpoint = trace.points[trace.best_index].checkpoint;
}

json to_json(const TrainingPoint& p) {
  json j{{"step", p.step},
         {"epoch", p.epoch},
         {"train_loss", p.train_loss},
         {"dev_loss", p.dev_loss},
         {"checkpoint", p.checkpoint}};
  j["train_acc"] = p.train_acc ? json(*p.train_acc) : json(nullptr);
  j["dev_acc"] = p.dev_acc ? json(*p.dev_acc) : json(nullptr);
  return j;
}

void write_trace_jsonl(const std::filesystem::path& path, const TrainingTrace& trace) {
  auto out = open_out(path);
  for (const auto& p : trace.points) {
    json j = to_json(p);
    j["kind"] = "point";
    j["seed"] = trace.seed;
    out << j.dump() << '\n';
  }
  out << json{{"kind", "best"},
              {"seed", trace.seed},
              {"best_index", trace.best_index},
              {"best_checkpoint", trace.best_checkpoint},
              {"best_dev_loss", trace.best_dev_loss}}
             .dump()
      << '\n';
}

TrainingTrace read_trace_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  TrainingTrace t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    t.seed = j.at("seed").get<std::uint64_t>();
    if (j.at("kind") == "best") {
      t.best_index = j.at("best_index").get<std::size_t>();
      t.best_checkpoint = j.at("best_checkpoint").get<std::string>();
      t.best_dev_loss = j.at("best_dev_loss").get<double>();
      continue;
    }
    TrainingPoint p;
    p.step = j.at("step").get<std::size_t>();
    p.epoch = j.at("epoch").get<std::size_t>();
    p.train_loss = j.at("train_loss").get<double>();
    p.dev_loss = j.at("dev_loss").get<double>();
    p.checkpoint = j.at("checkpoint").get<std::string>();
    if (!j.at("train_acc").is_null()) p.train_acc = j.at("train_acc").get<double>();
    if (!j.at("dev_acc").is_null()) p.dev_acc = j.at("dev_acc").get<double>();
    t.points.push_back(std::move(p));
  }
  return t;
}

void ClassifierConfig::validate() const {
  if (!(backbone_lr > 0.0) || !(head_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
}

json to_json(const ClassifierConfig& c) {
  return json{{"backbone_lr", c.backbone_lr}, {"head_lr", c.head_lr},
              {"beta1", c.beta1},             {"beta2", c.beta2},
              {"epsilon", c.epsilon},         {"weight_decay", c.weight_decay},
              {"batch_size", c.batch_size},   {"max_epochs", c.max_epochs},
              {"seeds", c.seeds},             {"train_eval_limit", c.train_eval_limit}};
}

ClassifierConfig classifier_config_from_json(const json& j) {
  ClassifierConfig c;
  try {
    c.backbone_lr = j.value("backbone_lr", c.backbone_lr);
    c.head_lr = j.value("head_lr", c.head_lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.seeds = j.value("seeds", c.seeds);
    c.train_eval_limit = j.value("train_eval_limit", c.train_eval_limit);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("classifier config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<TrainingTrace> train_classifier(const Transformer& encoder,
                                            std::span<const LabeledText> train,
                                            std::span<const LabeledText> dev,
                                            std::size_t num_classes,
                                            const ClassifierConfig& config) {
  config.validate();
  if (encoder.config().kind != ModelKind::encoder) throw Error("classification needs an encoder");
  if (num_classes < 2) throw Error("classification needs at least two classes");
  const auto tr = encode_labeled(encoder, train, num_classes, "training");
  const auto dv = encode_labeled(encoder, dev, num_classes, "dev");
  std::vector<TrainingTrace> traces;
  for (const auto seed : config.seeds) {
    traces.push_back(train_classifier_seed(encoder, tr, dv, num_classes, config, seed));
  }
  return traces;
}

std::vector<std::size_t> size_progression(std::size_t start, std::size_t stop, std::size_t step) {
  if (start == 0 || step == 0 || stop < start) throw ConfigError("invalid size progression");
  std::vector<std::size_t> out;
  for (std::size_t s = start; s <= stop; s += step) out.push_back(s);
  return out;
}

std::vector<ConvergencePoint> convergence_sweep(const Transformer& encoder,
                                                std::span<const LabeledText> pool,
                                                std::span<const LabeledText> dev,
                                                std::span<const std::size_t> sizes,
                                                std::size_t num_classes,
                                                const ClassifierConfig& config) {
  if (sizes.empty()) throw Error("empty size progression");
  for (const auto s : sizes) {
    if (s == 0 || s > pool.size()) {
      throw Error("size " + std::to_string(s) + " exceeds the corpus (" +
                  std::to_string(pool.size()) + ")");
    }
  }
  const auto order = permutation(pool.size(), derive_seed(config.seeds.front(), "sweep"));
  std::vector<ConvergencePoint> curve;
  for (const auto size : sizes) {
    std::vector<LabeledText> subset;
    subset.reserve(size);
    for (std::size_t i = 0; i < size; ++i) subset.push_back(pool[order[i]]);
    ConvergencePoint point;
    point.size = size;
    for (const auto& trace : train_classifier(encoder, subset, dev, num_classes, config)) {
      double best = 0.0;
      for (const auto& p : trace.points) best = std::max(best, p.dev_acc.value_or(0.0));
      point.best_dev_acc.push_back(best);
    }
    point.mean_best_dev_acc =
        std::accumulate(point.best_dev_acc.begin(), point.best_dev_acc.end(), 0.0) /
        static_cast<double>(point.best_dev_acc.size());
    log_info("convergence size " + std::to_string(size) + " best dev acc " +
             std::to_string(point.mean_best_dev_acc));
    curve.push_back(std::move(point));
  }
  return curve;
}

void write_convergence_csv(const std::filesystem::path& path,
                           std::span<const ConvergencePoint> curve) {
  auto out = open_out(path);
  out << "size,mean_best_dev_acc";
  const std::size_t seeds = curve.empty() ? 0 : curve.front().best_dev_acc.size();
  for (std::size_t s = 0; s < seeds; ++s) out << ",seed_" << s;
  out << '\n';
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g", p.size, p.mean_best_dev_acc);
    out << buf;
    for (const double a : p.best_dev_acc) {
      std::snprintf(buf, sizeof buf, ",%.17g", a);
      out << buf;
    }
    out << '\n';
  }
}

TuneMode parse_tune_mode(std::string_view name) {
  if (name == "lora") return TuneMode::lora;
  if (name == "full") return TuneMode::full;
  throw ConfigError("unknown tuning mode '" + std::string(name) + "'");
}

std::string_view to_string(TuneMode mode) { return mode == TuneMode::lora ? "lora" : "full"; }

void LmTrainConfig::validate() const {
  if (mode == TuneMode::lora) {
    try {
      lora.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (epochs == 0 && !max_steps) throw ConfigError("epochs must be at least 1");
  if (max_steps && *max_steps == 0) throw ConfigError("max_steps must be at least 1");
}

json to_json(const LmTrainConfig& c) {
  json targets = json::array();
  for (const auto p : c.lora.targets) targets.push_back(std::string(projection_name(p)));
  return json{{"mode", std::string(to_string(c.mode))},
              {"adapter_rank", c.lora.rank},
              {"adapter_alpha", c.lora.alpha},
              {"adapter_dropout", c.lora.dropout},
              {"target_module_names", targets},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"epsilon", c.epsilon},
              {"weight_decay", c.weight_decay},
              {"epochs", c.epochs},
              {"max_steps", c.max_steps ? json(*c.max_steps) : json(nullptr)},
              {"eval_every", c.eval_every},
              {"seed", c.seed}};
}

json to_json(const SftConfig& c) {
  json j = to_json(static_cast<const LmTrainConfig&>(c));
  j["strategy"] = std::string(c.strategy.label());
  j["append_eos"] = c.append_eos;
  return j;
}

SftConfig sft_config_from_json(const json& j) {
  SftConfig c;
  try {
    if (j.contains("mode")) c.mode = parse_tune_mode(j.at("mode").get<std::string>());
    c.lora.rank = j.value("adapter_rank", c.lora.rank);
    c.lora.alpha = j.value("adapter_alpha", c.lora.alpha);
    c.lora.dropout = j.value("adapter_dropout", c.lora.dropout);
    if (j.contains("target_module_names")) {
      c.lora.targets.clear();
      for (const auto& n : j.at("target_module_names")) {
        c.lora.targets.push_back(parse_projection(n.get<std::string>()));
      }
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("max_steps") && !j.at("max_steps").is_null()) {
      c.max_steps = j.at("max_steps").get<std::size_t>();
    }
    c.eval_every = j.value("eval_every", c.eval_every);
    c.seed = j.value("seed", c.seed);
    if (j.contains("strategy")) c.strategy = PromptStrategy::parse(j.at("strategy").get<std::string>());
    c.append_eos = j.value("append_eos", c.append_eos);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sft config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("sft config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<LmExample> render_sft_examples(const ModelHandle& model,
                                           std::span<const SituationRecord> records,
                                           const PromptStrategy& strategy, bool append_eos) {
  std::vector<LmExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    LmExample e;
    e.context = model_input(model, render_prompt(r, strategy, RenderStage::inference_prefix));
    e.target = model.tokenizer().encode(render_target_portion(r, strategy));
    if (append_eos) e.target.push_back(Tokenizer::kEos);
    out.push_back(std::move(e));
  }
  return out;
}

double lm_loss(const Transformer& model, std::span<const LmExample> examples) {
  if (examples.empty()) throw Error("loss over no examples");
  check_examples(examples, model.config().block_size, "evaluation");
  std::vector<double> nll(examples.size());
  std::vector<std::size_t> count(examples.size());
  parallel_for(examples.size(), [&](std::size_t i) {
    Activations act;
    std::vector<int> ids;
    std::vector<std::size_t> positions;
    lm_inputs(examples[i], ids, positions);
    model.forward(ids, act);
    const auto lp = model.lm_head(act, positions, examples[i].target, {}, nullptr, 1.0f);
    for (const double x : lp) nll[i] -= x;
    count[i] = lp.size();
  });
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    total += nll[i];
    tokens += count[i];
  }
  return total / static_cast<double>(tokens);
}

LmTrainResult train_lm(const Transformer& base, std::span<const LmExample> train,
                       std::span<const LmExample> dev, const LmTrainConfig& config,
                       const std::optional<std::filesystem::path>& run_dir) {
  config.validate();
  if (base.config().kind != ModelKind::decoder) throw Error("language-model training needs a decoder");
  if (train.empty()) throw Error("empty training split");
  if (dev.empty()) throw Error("no evaluation point can be recorded without a dev split");
  check_examples(train, base.config().block_size, "training");
  check_examples(dev, base.config().block_size, "dev");

  auto model = std::make_shared<Transformer>(base);
  const std::string base_id = base.model_id();
  const bool lora = config.mode == TuneMode::lora;
  AdamW opt({config.beta1, config.beta2, config.epsilon});
  std::optional<TransformerParams> base_grads;
  std::optional<LoraParams> lora_grads;
  if (lora) {
    model->attach_adapter(
        initialize_adapter(model->config(), config.lora, derive_seed(config.seed, "adapter")));
    lora_grads = LoraParams::shaped(model->config(), config.lora);
    register_params(opt, *model->adapter(), *lora_grads, config.lr, config.weight_decay);
  } else {
    base_grads = TransformerParams::shaped(model->config());
    register_params(opt, model->params(), *base_grads, config.lr, config.weight_decay);
  }

  const std::size_t steps_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = config.max_steps ? *config.max_steps : config.epochs * steps_per_epoch;
  const std::size_t eval_every = config.eval_every ? config.eval_every : steps_per_epoch;

  TrainingTrace trace;
  trace.seed = config.seed;
  LmSnapshot best;
  double best_loss = std::numeric_limits<double>::infinity();
  double running = 0.0;
  std::size_t running_batches = 0;
  Activations act;
  std::vector<int> ids;
  std::vector<std::size_t> positions;
  std::vector<float> dfinal;
  std::vector<std::size_t> order;
  const std::size_t C = model->config().n_embd;

  for (std::size_t step = 1; step <= total_steps; ++step) {
    const std::size_t epoch = (step - 1) / steps_per_epoch;
    const std::size_t offset = (step - 1) % steps_per_epoch;
    if (offset == 0) {
      order = permutation(train.size(), derive_seed(derive_seed(config.seed, "lm-epoch"), epoch));
    }
    const std::size_t start = offset * config.batch_size;
    const std::size_t end = std::min(train.size(), start + config.batch_size);
    std::size_t tokens = 0;
    for (std::size_t b = start; b < end; ++b) tokens += train[order[b]].target.size();
    const float scale = 1.0f / static_cast<float>(tokens);
    double batch_nll = 0.0;
    for (std::size_t b = start; b < end; ++b) {
      const auto& ex = train[order[b]];
      lm_inputs(ex, ids, positions);
      ForwardOptions fo{true, derive_seed(derive_seed(config.seed, "dropout"), step * 1000003 + b)};
      model->forward(ids, act, fo);
      dfinal.assign(act.seq * C, 0.0f);
      const auto lp = model->lm_head(act, positions, ex.target, dfinal,
                                     lora ? nullptr : &base_grads->wte, scale);
      for (const double x : lp) batch_nll -= x;
      model->backward(act, dfinal, lora ? nullptr : &*base_grads, lora ? &*lora_grads : nullptr);
    }
    // Adam reads the adapter through the pointer registered above, so the
    // attached adapter must not be replaced during training.
    opt.step();
    opt.zero_grad();
    running += batch_nll / static_cast<double>(tokens);
    ++running_batches;

    if (step % eval_every == 0 || step == total_steps) {
      TrainingPoint p;
      p.step = step;
      p.epoch = epoch + 1;
      p.train_loss = running / static_cast<double>(running_batches);
      p.dev_loss = lm_loss(*model, dev);
      p.checkpoint = step_name(step);
      running = 0.0;
      running_batches = 0;
      if (run_dir) {
        const auto dir = *run_dir / "checkpoints" / p.checkpoint;
        if (lora) {
          save_adapter(*model->adapter(), base_id, dir);
        } else {
          model->save(dir);
        }
      }
      if (p.dev_loss < best_loss) {
        best_loss = p.dev_loss;
        if (lora) {
          best.adapter = *model->adapter();
        } else {
          best.base = model->params();
        }
      }
      log_debug("lm step " + std::to_string(step) + " train " + std::to_string(p.train_loss) +
                " dev " + std::to_string(p.dev_loss));
      trace.points.push_back(std::move(p));
    }
  }
  finalize_trace(trace);
  if (lora) {
    *model->adapter() = std::move(*best.adapter);
  } else {
    model->params() = std::move(*best.base);
  }
  return {std::move(trace), std::move(model)};
}

LmTrainResult sft_train(const ModelHandle& model, std::span<const SituationRecord> train,
                        std::span<const SituationRecord> dev, const SftConfig& config,
                        const std::optional<std::filesystem::path>& run_dir) {
  if (model.kind() != ModelKind::decoder) throw Error("supervised fine-tuning needs a decoder");
  config.validate();
  const auto tr = render_sft_examples(model, train, config.strategy, config.append_eos);
  const auto dv = render_sft_examples(model, dev, config.strategy, config.append_eos);
  return train_lm(model.model(), tr, dv, config, run_dir);
}

std::vector<LmExample> pretraining_examples(const Tokenizer& tok,
                                            std::span<const std::string> texts,
                                            std::size_t window) {
  if (window < 2) throw Error("pretraining window must hold at least two tokens");
  std::vector<int> stream;
  for (const auto& t : texts) {
    const auto ids = tok.encode(t);
    stream.insert(stream.end(), ids.begin(), ids.end());
    stream.push_back(Tokenizer::kEos);
  }
  std::vector<LmExample> out;
  for (std::size_t at = 0; at < stream.size(); at += window) {
    const std::size_t end = std::min(stream.size(), at + window);
    LmExample e;
    e.context = {Tokenizer::kBos};
    e.target.assign(stream.begin() + static_cast<std::ptrdiff_t>(at),
                    stream.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(std::move(e));
  }
  return out;
}

MetricReport evaluate_generation(const ModelHandle& model, std::span<const SituationRecord> test,
                                 const PromptStrategy& strategy, const TokenEmbedder& embed,
                                 const GenerationOptions& options,
                                 std::vector<GenerationRecord>* records) {
  if (test.empty()) throw Error("evaluation needs a non-empty test set");
  const Field final_field = strategy.final_target();
  std::vector<GenerationRecord> items(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    const auto& r = test[i];
    auto& item = items[i];
    item.id = r.id;
    item.prefix = render_prompt(r, strategy, RenderStage::inference_prefix);
    item.gold = r.field(final_field);
    const std::size_t used = model_input(model, item.prefix).size();
    const std::size_t budget =
        used < model.window() ? std::min(options.max_new_tokens, model.window() - used) : 0;
    item.generation = generate_greedy(model, item.prefix, budget);
    item.fields = parse_generation(item.generation, strategy).fields;
  });
  std::vector<GenerationPair> pairs;
  std::size_t incomplete = 0;
  for (const auto& item : items) {
    pairs.push_back({item.fields.count(final_field) ? item.fields.at(final_field) : std::string(),
                     item.gold});
    std::string detail;
    for (const auto& [f, v] : item.fields) {
      if (f == final_field) continue;
      detail += " " + std::string(to_string(f)) + "='" + v + "'";
    }
    bool complete = true;
    for (const auto f : strategy.target_fields) {
      if (!item.fields.count(f) || item.fields.at(f).empty()) complete = false;
    }
    incomplete += complete ? 0 : 1;
    if (!detail.empty()) log_debug("generation " + item.id + ":" + detail);
  }
  auto report = score_pairs(pairs, embed, options.scoring);
  report.metadata["strategy"] = std::string(strategy.label());
  report.metadata["model_id"] = model.model_id();
  report.metadata["incomplete_generations"] = incomplete;
  report.metadata["scored_field"] = std::string(to_string(final_field));
  if (records) *records = std::move(items);
  return report;
}

}  // namespace probe
