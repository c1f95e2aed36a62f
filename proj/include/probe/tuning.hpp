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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "probe/backend.hpp"
#include "probe/corpus.hpp"
#include "probe/metrics.hpp"
#include "probe/synth.hpp"
#include "probe/transformer.hpp"

namespace probe {

// Decoupled-weight-decay Adam over a flat list of tensors. Each tensor has
// its own learning rate and decay; moments are kept per element.
class AdamW {
 public:
  struct Hyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  explicit AdamW(Hyper hyper) : hyper_(hyper) {}

  void add(Tensor* param, Tensor* grad, double lr, double weight_decay);
  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }

 private:
  struct Slot {
    Tensor* param;
    Tensor* grad;
    double lr;
    double weight_decay;
    std::vector<float> m, v;
  };
  Hyper hyper_;
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

// Biases and layer-norm parameters are exempt from weight decay.
bool decays(const std::string& param_name);

struct TrainingPoint {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  std::optional<double> train_acc;
  std::optional<double> dev_acc;
  std::string checkpoint;
};

struct TrainingTrace {
  std::uint64_t seed = 0;
  std::vector<TrainingPoint> points;
  std::string best_checkpoint;
  double best_dev_loss = 0.0;
  std::size_t best_index = 0;
};

// Index of the minimum dev loss; the earliest point wins ties. Throws when
// the trace has no points.
std::size_t select_best_checkpoint(const TrainingTrace& trace);
// Sets best_index, best_checkpoint and best_dev_loss from the points.
void finalize_trace(TrainingTrace& trace);

nlohmann::json to_json(const TrainingPoint& p);
// One line per point, then a line naming the best point.
void write_trace_jsonl(const std::filesystem::path& path, const TrainingTrace& trace);
TrainingTrace read_trace_jsonl(const std::filesystem::path& path);

struct ClassifierConfig {
  double backbone_lr = 5e-5;
  double head_lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-3;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  // Train accuracy is measured on at most this many training samples after
  // each epoch; 0 measures all of them.
  std::size_t train_eval_limit = 0;

  void validate() const;
};

nlohmann::json to_json(const ClassifierConfig& c);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);

// Text, label pairs for sequence classification.
using LabeledText = synth::LabeledText;

// Fine-tunes a copy of `encoder` plus a fresh linear head once per seed.
// One trace point per epoch, with train/dev loss and accuracy.
std::vector<TrainingTrace> train_classifier(const Transformer& encoder,
                                            std::span<const LabeledText> train,
                                            std::span<const LabeledText> dev,
                                            std::size_t num_classes,
                                            const ClassifierConfig& config);

struct ConvergencePoint {
  std::size_t size = 0;
  double mean_best_dev_acc = 0.0;
  std::vector<double> best_dev_acc;  // per seed
};

// Sizes start, start+step, ... up to and including `stop` when it lies on
// the progression.
std::vector<std::size_t> size_progression(std::size_t start, std::size_t stop,
                                          std::size_t step);

// Trains from scratch at each size on a nested prefix of a fixed
// permutation of `pool` and records the best dev accuracy across epochs.
std::vector<ConvergencePoint> convergence_sweep(const Transformer& encoder,
                                                std::span<const LabeledText> pool,
                                                std::span<const LabeledText> dev,
                                                std::span<const std::size_t> sizes,
                                                std::size_t num_classes,
                                                const ClassifierConfig& config);
void write_convergence_csv(const std::filesystem::path& path,
                           std::span<const ConvergencePoint> curve);

enum class TuneMode { lora, full };
TuneMode parse_tune_mode(std::string_view name);
std::string_view to_string(TuneMode mode);

// Optimizer and schedule shared by supervised fine-tuning and LM
// pretraining.
struct LmTrainConfig {
  TuneMode mode = TuneMode::lora;
  LoraConfig lora;
  std::size_t batch_size = 16;
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::size_t epochs = 3;
  std::optional<std::size_t> max_steps;
  std::size_t eval_every = 0;  // steps between evaluations; 0 = every epoch
  std::uint64_t seed = 1;

  void validate() const;
};

struct SftConfig : LmTrainConfig {
  PromptStrategy strategy = PromptStrategy::of(StrategyName::judg);
  bool append_eos = true;  // supervise an end-of-sequence token after the target
};

nlohmann::json to_json(const LmTrainConfig& c);
nlohmann::json to_json(const SftConfig& c);
SftConfig sft_config_from_json(const nlohmann::json& j);

// One supervised sequence: loss covers `target` only.
struct LmExample {
  std::vector<int> context;  // starts with BOS
  std::vector<int> target;
};

std::vector<LmExample> render_sft_examples(const ModelHandle& model,
                                           std::span<const SituationRecord> records,
                                           const PromptStrategy& strategy,
                                           bool append_eos);

struct LmTrainResult {
  TrainingTrace trace;
  std::shared_ptr<Transformer> model;  // best checkpoint restored
};

// Masked next-token training. In lora mode the base weights stay frozen and
// a fresh adapter is trained (an attached adapter is replaced); in full mode
// every weight is trained. When `run_dir` is given, each evaluation writes a
// checkpoint under run_dir/checkpoints/step-NNNNNN.
LmTrainResult train_lm(const Transformer& base, std::span<const LmExample> train,
                       std::span<const LmExample> dev, const LmTrainConfig& config,
                       const std::optional<std::filesystem::path>& run_dir = {});

// Mean per-token negative log-likelihood of the targets.
double lm_loss(const Transformer& model, std::span<const LmExample> examples);

LmTrainResult sft_train(const ModelHandle& model, std::span<const SituationRecord> train,
                        std::span<const SituationRecord> dev, const SftConfig& config,
                        const std::optional<std::filesystem::path>& run_dir = {});

// Joins texts into one EOS-separated token stream and cuts it into
// consecutive examples of at most `window` tokens after BOS, supervised on
// every token.
std::vector<LmExample> pretraining_examples(const Tokenizer& tok,
                                            std::span<const std::string> texts,
                                            std::size_t window);

struct GenerationRecord {
  std::string id;
  std::string prefix;
  std::string generation;
  std::map<Field, std::string> fields;
  std::string gold;
};

struct GenerationOptions {
  std::size_t max_new_tokens = 48;
  ScoringOptions scoring;
};

// Generates greedily from each inference prefix and scores the final target
// field against gold. Intermediate fields are kept in `records` when given.
MetricReport evaluate_generation(const ModelHandle& model,
                                 std::span<const SituationRecord> test,
                                 const PromptStrategy& strategy,
                                 const TokenEmbedder& embed,
                                 const GenerationOptions& options = {},
                                 std::vector<GenerationRecord>* records = nullptr);

}  // namespace probe
