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

#include "probe/cache.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "probe/error.hpp"
#include "probe/hashing.hpp"
#include "probe/log.hpp"

namespace probe {

static_assert(std::endian::native == std::endian::little,
              "cache files are little-endian float32");

using json = nlohmann::json;

namespace {

std::string model_dir_name(const std::string& model_id) {
  return sha256_hex(model_id).substr(0, 24);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes `data` to a unique temporary sibling and renames it over `target`.
void atomic_write(const std::filesystem::path& target, std::string_view data) {
  static std::atomic<unsigned> counter{0};
  std::filesystem::create_directories(target.parent_path());
  const auto tmp = target.parent_path() /
                   (target.filename().string() + ".tmp." + std::to_string(::getpid()) +
                    "." + std::to_string(counter++));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write cache file " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) throw Error("short write to cache file " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot publish cache file " + target.string() + ": " + ec.message());
  }
}

json record_body(const std::string& model_id, const LikelihoodRecord& r) {
  return json{{"model_id", model_id},
              {"context_hash", r.context_hash},
              {"continuation_hash", r.continuation_hash},
              {"token_logprobs", r.token_logprobs},
              {"sum_logprob", r.sum_logprob},
              {"norm_prob", r.norm_prob}};
}

}  // namespace

HiddenStateCache::HiddenStateCache(std::filesystem::path root)
    : root_(std::move(root)) {}

std::filesystem::path HiddenStateCache::data_path(const std::string& model_id,
                                                  const std::string& text_hash) const {
  return root_ / model_dir_name(model_id) / (text_hash + ".f32");
}

std::filesystem::path HiddenStateCache::sidecar_path(const std::string& model_id,
                                                     const std::string& text_hash) const {
  return root_ / model_dir_name(model_id) / (text_hash + ".json");
}

std::optional<LayerStack> HiddenStateCache::lookup(const std::string& model_id,
                                                   const std::string& text_hash) const {
  const auto side = sidecar_path(model_id, text_hash);
  if (!std::filesystem::exists(side)) return std::nullopt;
  auto miss = [&](const std::string& why) -> std::optional<LayerStack> {
    log_warn("hidden-state cache entry " + side.string() + " ignored: " + why);
    return std::nullopt;
  };
  json meta;
  try {
    meta = json::parse(read_file(side));
  } catch (const json::exception&) {
    return miss("unreadable sidecar");
  }
  LayerStack s;
  std::string checksum;
  try {
    if (meta.at("model_id").get<std::string>() != model_id ||
        meta.at("text_hash").get<std::string>() != text_hash) {
      return miss("key mismatch");
    }
    s.num_layers = meta.at("num_layers").get<std::size_t>();
    s.hidden_dim = meta.at("hidden_dim").get<std::size_t>();
    checksum = meta.at("sha256").get<std::string>();
  } catch (const json::exception&) {
    return miss("malformed sidecar");
  }
  const std::string bytes = read_file(data_path(model_id, text_hash));
  if (bytes.size() != s.num_layers * s.hidden_dim * sizeof(float)) {
    return miss("data size does not match shape");
  }
  if (sha256_hex(bytes) != checksum) return miss("checksum mismatch");
  s.text_hash = text_hash;
  s.data.resize(s.num_layers * s.hidden_dim);
  std::memcpy(s.data.data(), bytes.data(), bytes.size());
  return s;
}

void HiddenStateCache::insert(const std::string& model_id,
                              const LayerStack& stack) const {
  const std::string_view bytes(reinterpret_cast<const char*>(stack.data.data()),
                               stack.data.size() * sizeof(float));
  const json meta = {{"model_id", model_id},
                     {"text_hash", stack.text_hash},
                     {"num_layers", stack.num_layers},
                     {"hidden_dim", stack.hidden_dim},
                     {"sha256", sha256_hex(bytes)}};
  atomic_write(data_path(model_id, stack.text_hash), bytes);
  atomic_write(sidecar_path(model_id, stack.text_hash), meta.dump() + "\n");
}

LayerStack HiddenStateCache::get_or_compute(
    const std::string& model_id, const std::string& text_hash,
    const std::function<LayerStack()>& compute) const {
  if (auto hit = lookup(model_id, text_hash)) return *hit;
  LayerStack s = compute();
  insert(model_id, s);
  return s;
}

LikelihoodCache::LikelihoodCache(std::filesystem::path root)
    : root_(std::move(root)) {}

std::filesystem::path LikelihoodCache::file_path(const std::string& model_id) const {
  return root_ / (model_dir_name(model_id) + ".jsonl");
}

void LikelihoodCache::load(const std::string& model_id) {
  if (loaded_[model_id]) return;
  loaded_[model_id] = true;
  std::ifstream in(file_path(model_id));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    try {
      const json j = json::parse(line);
      json body = j;
      const auto checksum = body.at("sha256").get<std::string>();
      body.erase("sha256");
      if (sha256_hex(body.dump()) != checksum) throw Error("checksum mismatch");
      if (body.at("model_id").get<std::string>() != model_id) throw Error("model mismatch");
      LikelihoodRecord r;
      r.context_hash = body.at("context_hash").get<std::string>();
      r.continuation_hash = body.at("continuation_hash").get<std::string>();
      r.token_logprobs = body.at("token_logprobs").get<std::vector<double>>();
      r.sum_logprob = body.at("sum_logprob").get<double>();
      r.norm_prob = body.at("norm_prob").get<double>();
      entries_.emplace(Key{model_id, r.context_hash, r.continuation_hash}, std::move(r));
    } catch (const std::exception& e) {
      log_warn("likelihood cache " + file_path(model_id).string() + " line " +
               std::to_string(n) + " ignored: " + e.what());
    }
  }
}

std::optional<LikelihoodRecord> LikelihoodCache::lookup(
    const std::string& model_id, const std::string& context_hash,
    const std::string& continuation_hash) {
  std::lock_guard lock(mu_);
  load(model_id);
  auto it = entries_.find(Key{model_id, context_hash, continuation_hash});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void LikelihoodCache::insert(const std::string& model_id,
                             const LikelihoodRecord& record) {
  std::lock_guard lock(mu_);
  load(model_id);
  const Key key{model_id, record.context_hash, record.continuation_hash};
  if (entries_.contains(key)) return;
  json line = record_body(model_id, record);
  line["sha256"] = sha256_hex(line.dump());
  const std::string text = line.dump() + "\n";
  const auto path = file_path(model_id);
  std::filesystem::create_directories(path.parent_path());
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw Error("cannot open likelihood cache " + path.string());
  const auto written = ::write(fd, text.data(), text.size());
  ::close(fd);
  if (written != static_cast<ssize_t>(text.size())) {
    throw Error("short write to likelihood cache " + path.string());
  }
  entries_.emplace(key, record);
}

LikelihoodRecord LikelihoodCache::get_or_compute(
    const std::string& model_id, const std::string& context_hash,
    const std::string& continuation_hash,
    const std::function<LikelihoodRecord()>& compute) {
  if (auto hit = lookup(model_id, context_hash, continuation_hash)) return *hit;
  LikelihoodRecord r = compute();
  insert(model_id, r);
  return r;
}

}  // namespace probe
