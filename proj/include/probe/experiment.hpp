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
#include <string>
#include <string_view>

#include <json.hpp>

#include "probe/backend.hpp"

// Config-driven pipelines behind the command-line tool. A config is one
// canonical JSON document; every run writes its resolved copy to
// <out_dir>/config.json before any compute starts.

namespace probe {

inline constexpr int kConfigSchemaVersion = 1;

enum class Command {
  ingest,
  train_clf,
  converge,
  sft,
  evaluate,
  rla,
  supportive,
  perplexity,
  report,
  synth,
  init_model,
  lm_train
};

Command parse_command(std::string_view name);
std::string_view to_string(Command command);

// Every recognized field with its default value.
nlohmann::json default_config();

// Merges `user` onto the defaults. Unknown keys, type mismatches and a
// schema_version other than the current one throw ConfigError.
nlohmann::json resolve_config(const nlohmann::json& user);

// Sets a dotted key, e.g. "sft.lr=1e-3". The value is read as JSON when it
// parses and as a plain string otherwise.
void apply_override(nlohmann::json& config, std::string_view assignment);

// Range checks and presence of the inputs the command reads. Throws
// ConfigError; runs no compute.
void validate_config(const nlohmann::json& config);

// Validates, prepares the run directory, writes the config snapshot and runs
// the named pipeline. Returns the run directory.
std::filesystem::path run_experiment(const nlohmann::json& config);

// The model a run points at: a checkpoint directory, or a training run
// directory whose best.json names its selected checkpoint.
ModelHandle load_model_ref(const std::filesystem::path& path,
                           const std::string& adapter = "");

}  // namespace probe
