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
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>

#include "probe/backend.hpp"

// On-disk caches shared across runs.
//
// Hidden states: one little-endian float32 file per (model_id, text_hash)
// with shape (num_layers, hidden_dim), plus a JSON sidecar carrying the
// shape and a SHA-256 of the data file. Both are written to a temporary
// name and renamed into place, so readers never see partial files and
// concurrent writers of the same key leave one complete entry.
//
// Likelihoods: one append-only JSONL file per model, one record per line,
// each line carrying its own checksum. Lines are appended with a single
// write on an O_APPEND descriptor.
//
// Entries that fail validation are treated as misses and logged.

namespace probe {

class HiddenStateCache {
 public:
  explicit HiddenStateCache(std::filesystem::path root);

  std::optional<LayerStack> lookup(const std::string& model_id,
                                   const std::string& text_hash) const;
  void insert(const std::string& model_id, const LayerStack& stack) const;

  LayerStack get_or_compute(const std::string& model_id,
                            const std::string& text_hash,
                            const std::function<LayerStack()>& compute) const;

  std::filesystem::path data_path(const std::string& model_id,
                                  const std::string& text_hash) const;
  std::filesystem::path sidecar_path(const std::string& model_id,
                                     const std::string& text_hash) const;

 private:
  std::filesystem::path root_;
};

class LikelihoodCache {
 public:
  explicit LikelihoodCache(std::filesystem::path root);

  std::optional<LikelihoodRecord> lookup(const std::string& model_id,
                                         const std::string& context_hash,
                                         const std::string& continuation_hash);
  void insert(const std::string& model_id, const LikelihoodRecord& record);

  LikelihoodRecord get_or_compute(const std::string& model_id,
                                  const std::string& context_hash,
                                  const std::string& continuation_hash,
                                  const std::function<LikelihoodRecord()>& compute);

  std::filesystem::path file_path(const std::string& model_id) const;

 private:
  using Key = std::tuple<std::string, std::string, std::string>;
  void load(const std::string& model_id);

  std::filesystem::path root_;
  std::mutex mu_;
  std::map<std::string, bool> loaded_;
  std::map<Key, LikelihoodRecord> entries_;
};

// Both caches under one directory; the CLI owns one per run.
struct CacheSet {
  explicit CacheSet(const std::filesystem::path& dir)
      : hidden(dir / "hidden"), likelihood(dir / "likelihood") {}
  HiddenStateCache hidden;
  LikelihoodCache likelihood;
};

}  // namespace probe
