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

#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "probe/error.hpp"
#include "probe/experiment.hpp"

namespace {

constexpr int kRuntimeError = 1;
constexpr int kConfigError = 2;

nlohmann::json read_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw probe::ConfigError("cannot read config " + path);
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw probe::ConfigError("config is not valid JSON: " + path);
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fine-tuning and representational analysis experiments"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  bool dry_run = false;
  const std::pair<const char*, const char*> commands[] = {
      {"ingest", "Load a corpus and write train/dev/test splits"},
      {"train-clf", "Fine-tune an encoder classifier once per seed"},
      {"converge", "Best dev accuracy across training-set sizes"},
      {"sft", "Fine-tune a decoder on rendered prompts"},
      {"evaluate", "Generate on a split and score against gold"},
      {"rla", "Representation-likelihood correlation ratio"},
      {"supportive", "Top-k supportive training samples per test sample"},
      {"perplexity", "Sliding-window perplexity of a text stream"},
      {"report", "Tables and figures from finished runs"},
      {"synth", "Write a synthetic corpus"},
      {"init-model", "Build a tokenizer and a randomly initialized model"},
      {"lm-train", "Language-model training on plain text"},
  };
  for (const auto& [name, description] : commands) {
    auto* sub = app.add_subcommand(name, description);
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--set", overrides, "Override a config field, e.g. --set sft.lr=1e-3");
    sub->add_flag("--dry-run", dry_run, "Validate and print the resolved config without running");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    nlohmann::json user = config_path.empty() ? nlohmann::json::object() : read_config(config_path);
    if (!user.is_object()) throw probe::ConfigError("config must be a JSON object");
    user["command"] = app.get_subcommands().front()->get_name();
    for (const auto& o : overrides) probe::apply_override(user, o);
    const auto resolved = probe::resolve_config(user);
    probe::validate_config(resolved);
    if (dry_run) {
      std::cout << resolved.dump(2) << "\n";
      return 0;
    }
    const auto out = probe::run_experiment(resolved);
    std::cout << out.string() << "\n";
    return 0;
  } catch (const probe::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}
