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

#include "probe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "probe/error.hpp"

namespace probe {

double f_measure(double precision, double recall) {
  return precision + recall > 0.0
             ? 2.0 * precision * recall / (precision + recall)
             : 0.0;
}

std::vector<std::string> rouge_tokens(std::string_view text,
                                      const RougeOptions& options) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    tokens.push_back(options.stem && cur.size() > 3 ? porter_stem(cur) : cur);
    cur.clear();
  };
  for (unsigned char c : text) {
    const auto l = static_cast<char>(std::tolower(c));
    if ((l >= 'a' && l <= 'z') || (l >= '0' && l <= '9')) {
      cur.push_back(l);
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

namespace {

using Ngrams = std::map<std::vector<std::string_view>, std::size_t>;

Ngrams ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  Ngrams out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::vector<std::string_view> key(tokens.begin() + i, tokens.begin() + i + n);
    out[key]++;
  }
  return out;
}

Prf ngram_score(const std::vector<std::string>& cand,
                const std::vector<std::string>& ref, std::size_t n) {
  const auto c = ngrams(cand, n);
  const auto r = ngrams(ref, n);
  std::size_t overlap = 0, c_total = 0, r_total = 0;
  for (const auto& [g, count] : r) {
    r_total += count;
    auto it = c.find(g);
    if (it != c.end()) overlap += std::min(count, it->second);
  }
  for (const auto& [g, count] : c) c_total += count;
  Prf s;
  s.precision = static_cast<double>(overlap) / static_cast<double>(std::max<std::size_t>(c_total, 1));
  s.recall = static_cast<double>(overlap) / static_cast<double>(std::max<std::size_t>(r_total, 1));
  s.f1 = f_measure(s.precision, s.recall);
  return s;
}

std::size_t lcs_length(const std::vector<std::string>& a,
                       const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

Prf rouge(std::string_view candidate, std::string_view reference,
          RougeVariant variant, const RougeOptions& options) {
  const auto cand = rouge_tokens(candidate, options);
  const auto ref = rouge_tokens(reference, options);
  if (cand.empty() || ref.empty()) return {};
  switch (variant) {
    case RougeVariant::r1: return ngram_score(cand, ref, 1);
    case RougeVariant::r2: return ngram_score(cand, ref, 2);
    case RougeVariant::rL: {
      const auto l = static_cast<double>(lcs_length(cand, ref));
      Prf s;
      s.precision = l / static_cast<double>(cand.size());
      s.recall = l / static_cast<double>(ref.size());
      s.f1 = f_measure(s.precision, s.recall);
      return s;
    }
  }
  return {};
}

// Porter stemmer, following the published step definitions.
namespace {

class Porter {
 public:
  explicit Porter(std::string_view w) : b_(w), k_(static_cast<int>(w.size()) - 1) {}

  std::string run() {
    if (k_ <= 1) return b_;
    step1ab();
    if (k_ > 0) {
      step1c();
      step2();
      step3();
      step4();
      step5();
    }
    return b_.substr(0, static_cast<std::size_t>(k_ + 1));
  }

 private:
  bool cons(int i) const {
    switch (b_[static_cast<std::size_t>(i)]) {
      case 'a': case 'e': case 'i': case 'o': case 'u': return false;
      case 'y': return i == 0 ? true : !cons(i - 1);
      default: return true;
    }
  }

  // Number of VC sequences in b[0..j].
  int m() const {
    int n = 0, i = 0;
    while (true) {
      if (i > j_) return n;
      if (!cons(i)) break;
      ++i;
    }
    ++i;
    while (true) {
      while (true) {
        if (i > j_) return n;
        if (cons(i)) break;
        ++i;
      }
      ++i;
      ++n;
      while (true) {
        if (i > j_) return n;
        if (!cons(i)) break;
        ++i;
      }
      ++i;
    }
  }

  bool vowel_in_stem() const {
    for (int i = 0; i <= j_; ++i) {
      if (!cons(i)) return true;
    }
    return false;
  }

  bool doublec(int j) const {
    if (j < 1) return false;
    if (b_[static_cast<std::size_t>(j)] != b_[static_cast<std::size_t>(j - 1)]) return false;
    return cons(j);
  }

  bool cvc(int i) const {
    if (i < 2 || !cons(i) || cons(i - 1) || !cons(i - 2)) return false;
    const char ch = b_[static_cast<std::size_t>(i)];
    return ch != 'w' && ch != 'x' && ch != 'y';
  }

  bool ends(std::string_view s) {
    const int len = static_cast<int>(s.size());
    if (len > k_ + 1) return false;
    if (b_.compare(static_cast<std::size_t>(k_ - len + 1), s.size(), s) != 0) return false;
    j_ = k_ - len;
    return true;
  }

  void setto(std::string_view s) {
    b_.replace(static_cast<std::size_t>(j_ + 1), static_cast<std::size_t>(k_ - j_), s);
    k_ = j_ + static_cast<int>(s.size());
    b_.resize(static_cast<std::size_t>(k_ + 1));
  }

  void r(std::string_view s) {
    if (m() > 0) setto(s);
  }

  void step1ab() {
    if (b_[static_cast<std::size_t>(k_)] == 's') {
      if (ends("sses")) {
        k_ -= 2;
      } else if (ends("ies")) {
        setto("i");
      } else if (b_[static_cast<std::size_t>(k_ - 1)] != 's') {
        --k_;
      }
      b_.resize(static_cast<std::size_t>(k_ + 1));
    }
    if (ends("eed")) {
      if (m() > 0) {
        --k_;
        b_.resize(static_cast<std::size_t>(k_ + 1));
      }
    } else if ((ends("ed") || ends("ing")) && vowel_in_stem()) {
      k_ = j_;
      b_.resize(static_cast<std::size_t>(k_ + 1));
      if (ends("at")) {
        setto("ate");
      } else if (ends("bl")) {
        setto("ble");
      } else if (ends("iz")) {
        setto("ize");
      } else if (doublec(k_)) {
        const char ch = b_[static_cast<std::size_t>(k_)];
        if (ch != 'l' && ch != 's' && ch != 'z') {
          --k_;
          b_.resize(static_cast<std::size_t>(k_ + 1));
        }
      } else {
        j_ = k_;
        if (m() == 1 && cvc(k_)) setto("e");
      }
    }
  }

  void step1c() {
    if (ends("y") && vowel_in_stem()) b_[static_cast<std::size_t>(k_)] = 'i';
  }

  void step2() {
    if (k_ < 1) return;
    switch (b_[static_cast<std::size_t>(k_ - 1)]) {
      case 'a':
        if (ends("ational")) { r("ate"); break; }
        if (ends("tional")) { r("tion"); break; }
        break;
      case 'c':
        if (ends("enci")) { r("ence"); break; }
        if (ends("anci")) { r("ance"); break; }
        break;
      case 'e':
        if (ends("izer")) { r("ize"); break; }
        break;
      case 'l':
        if (ends("bli")) { r("ble"); break; }
        if (ends("alli")) { r("al"); break; }
        if (ends("entli")) { r("ent"); break; }
        if (ends("eli")) { r("e"); break; }
        if (ends("ousli")) { r("ous"); break; }
        break;
      case 'o':
        if (ends("ization")) { r("ize"); break; }
        if (ends("ation")) { r("ate"); break; }
        if (ends("ator")) { r("ate"); break; }
        break;
      case 's':
        if (ends("alism")) { r("al"); break; }
        if (ends("iveness")) { r("ive"); break; }
        if (ends("fulness")) { r("ful"); break; }
        if (ends("ousness")) { r("ous"); break; }
        break;
      case 't':
        if (ends("aliti")) { r("al"); break; }
        if (ends("iviti")) { r("ive"); break; }
        if (ends("biliti")) { r("ble"); break; }
        break;
      case 'g':
        if (ends("logi")) { r("log"); break; }
        break;
      default: break;
    }
  }

  void step3() {
    switch (b_[static_cast<std::size_t>(k_)]) {
      case 'e':
        if (ends("icate")) { r("ic"); break; }
        if (ends("ative")) { r(""); break; }
        if (ends("alize")) { r("al"); break; }
        break;
      case 'i':
        if (ends("iciti")) { r("ic"); break; }
        break;
      case 'l':
        if (ends("ical")) { r("ic"); break; }
        if (ends("ful")) { r(""); break; }
        break;
      case 's':
        if (ends("ness")) { r(""); break; }
        break;
      default: break;
    }
  }

  void step4() {
    if (k_ < 1) return;
    switch (b_[static_cast<std::size_t>(k_ - 1)]) {
      case 'a': if (ends("al")) break; return;
      case 'c': if (ends("ance") || ends("ence")) break; return;
      case 'e': if (ends("er")) break; return;
      case 'i': if (ends("ic")) break; return;
      case 'l': if (ends("able") || ends("ible")) break; return;
      case 'n':
        if (ends("ant") || ends("ement") || ends("ment") || ends("ent")) break;
        return;
      case 'o':
        if (ends("ion") && j_ >= 0 &&
            (b_[static_cast<std::size_t>(j_)] == 's' || b_[static_cast<std::size_t>(j_)] == 't')) {
          break;
        }
        if (ends("ou")) break;
        return;
      case 's': if (ends("ism")) break; return;
      case 't': if (ends("ate") || ends("iti")) break; return;
      case 'u': if (ends("ous")) break; return;
      case 'v': if (ends("ive")) break; return;
      case 'z': if (ends("ize")) break; return;
      default: return;
    }
    if (m() > 1) {
      k_ = j_;
      b_.resize(static_cast<std::size_t>(k_ + 1));
    }
  }

  void step5() {
    j_ = k_;
    if (b_[static_cast<std::size_t>(k_)] == 'e') {
      const int a = m();
      if (a > 1 || (a == 1 && !cvc(k_ - 1))) {
        --k_;
        b_.resize(static_cast<std::size_t>(k_ + 1));
      }
    }
    if (b_[static_cast<std::size_t>(k_)] == 'l' && doublec(k_) && m() > 1) {
      --k_;
      b_.resize(static_cast<std::size_t>(k_ + 1));
    }
  }

  std::string b_;
  int k_;
  int j_ = 0;
};

}  // namespace

std::string porter_stem(std::string_view word) { return Porter(word).run(); }

TokenEmbedder model_embedder(const ModelHandle& model, std::size_t layer) {
  return [model, layer](std::string_view text) {
    return token_embeddings(model, text, layer);
  };
}

namespace {

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

double greedy_side(const std::vector<std::vector<float>>& from,
                   const std::vector<std::vector<float>>& to) {
  double total = 0.0;
  for (const auto& f : from) {
    double best = -1.0;
    for (const auto& t : to) best = std::max(best, cosine(f, t));
    total += best;
  }
  return total / static_cast<double>(from.size());
}

}  // namespace

Prf embedding_f1(std::string_view candidate, std::string_view reference,
                 const TokenEmbedder& embed) {
  const auto c = embed(candidate);
  const auto r = embed(reference);
  if (c.empty() || r.empty()) throw Error("embedding_f1 needs non-empty texts");
  Prf s;
  s.precision = greedy_side(c, r);
  s.recall = greedy_side(r, c);
  s.f1 = f_measure(s.precision, s.recall);
  return s;
}

double rescale_score(double value, double baseline) {
  if (baseline >= 1.0) throw Error("rescale baseline must be below 1");
  return (value - baseline) / (1.0 - baseline);
}

PerplexityResult perplexity(const ModelHandle& model,
                            std::span<const int> stream, std::size_t window,
                            std::size_t stride) {
  if (window == 0 || stride == 0 || stride > window) {
    throw Error("perplexity needs 0 < stride <= window");
  }
  if (window + 1 > model.window()) {
    throw WindowOverflow("perplexity window of " + std::to_string(window) +
                         " tokens plus BOS exceeds the context window of " +
                         std::to_string(model.window()));
  }
  if (stream.size() < window) {
    throw Error("token stream of " + std::to_string(stream.size()) +
                " tokens is shorter than the window of " + std::to_string(window));
  }
  double nll = 0.0;
  std::size_t scored = 0;
  std::size_t prev_end = 0;
  Activations act;
  std::vector<int> ids;
  std::vector<std::size_t> positions;
  std::vector<int> targets;
  for (std::size_t begin = 0;; begin += stride) {
    const std::size_t end = std::min(begin + window, stream.size());
    const std::size_t fresh = end - prev_end;
    ids.assign({Tokenizer::kBos});
    ids.insert(ids.end(), stream.begin() + static_cast<std::ptrdiff_t>(begin),
               stream.begin() + static_cast<std::ptrdiff_t>(end));
    model.model().forward(ids, act);
    positions.clear();
    targets.clear();
    // Token stream[i] sits at input index i - begin + 1 and is predicted
    // from the position before it.
    for (std::size_t i = end - fresh; i < end; ++i) {
      positions.push_back(i - begin);
      targets.push_back(stream[i]);
    }
    const auto lps = model.model().lm_head(act, positions, targets, {}, nullptr, 1.0f);
    for (double lp : lps) nll -= lp;
    scored += fresh;
    prev_end = end;
    if (end == stream.size()) break;
  }
  PerplexityResult r;
  r.tokens = scored;
  r.mean_nll = nll / static_cast<double>(scored);
  r.perplexity = std::exp(r.mean_nll);
  r.window = window;
  r.stride = stride;
  return r;
}

namespace {

template <class T>
double accuracy_impl(std::span<const T> predictions, std::span<const T> gold) {
  if (predictions.size() != gold.size()) {
    throw Error("accuracy: " + std::to_string(predictions.size()) +
                " predictions for " + std::to_string(gold.size()) + " labels");
  }
  if (gold.empty()) throw Error("accuracy of an empty list");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predictions[i] == gold[i];
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

}  // namespace

double accuracy(std::span<const int> predictions, std::span<const int> gold) {
  return accuracy_impl(predictions, gold);
}

double accuracy(std::span<const std::string> predictions,
                std::span<const std::string> gold) {
  return accuracy_impl(predictions, gold);
}

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json j = {{"embedding_f1", report.embedding_f1},
                      {"rouge1", report.rouge1},
                      {"rouge2", report.rouge2},
                      {"rougeL", report.rougeL},
                      {"n_items", report.n_items},
                      {"metadata", report.metadata}};
  j["embedding_f1_rescaled"] = report.embedding_f1_rescaled
                                   ? nlohmann::json(*report.embedding_f1_rescaled)
                                   : nlohmann::json(nullptr);
  j["accuracy"] = report.accuracy ? nlohmann::json(*report.accuracy) : nlohmann::json(nullptr);
  j["perplexity"] = report.perplexity ? nlohmann::json(*report.perplexity) : nlohmann::json(nullptr);
  return j;
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.embedding_f1 = j.at("embedding_f1").get<double>();
  r.rouge1 = j.at("rouge1").get<double>();
  r.rouge2 = j.at("rouge2").get<double>();
  r.rougeL = j.at("rougeL").get<double>();
  r.n_items = j.at("n_items").get<std::size_t>();
  r.metadata = j.value("metadata", nlohmann::json::object());
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  r.embedding_f1_rescaled = opt("embedding_f1_rescaled");
  r.accuracy = opt("accuracy");
  r.perplexity = opt("perplexity");
  return r;
}

MetricReport score_pairs(std::span<const GenerationPair> pairs,
                         const TokenEmbedder& embed,
                         const ScoringOptions& options) {
  if (pairs.empty()) throw Error("no generation pairs to score");
  MetricReport rep;
  for (const auto& p : pairs) {
    rep.rouge1 += rouge(p.candidate, p.reference, RougeVariant::r1, options.rouge).f1;
    rep.rouge2 += rouge(p.candidate, p.reference, RougeVariant::r2, options.rouge).f1;
    rep.rougeL += rouge(p.candidate, p.reference, RougeVariant::rL, options.rouge).f1;
    if (!rouge_tokens(p.candidate).empty()) {
      rep.embedding_f1 += embedding_f1(p.candidate, p.reference, embed).f1;
    }
  }
  const double n = static_cast<double>(pairs.size());
  rep.rouge1 /= n;
  rep.rouge2 /= n;
  rep.rougeL /= n;
  rep.embedding_f1 /= n;
  rep.n_items = pairs.size();
  if (options.rescale_baseline) {
    rep.embedding_f1_rescaled = rescale_score(rep.embedding_f1, *options.rescale_baseline);
  }
  rep.metadata = {{"rouge_tokenizer", "lowercase, non-alphanumeric runs split"},
                  {"rouge_stemming", options.rouge.stem},
                  {"embedding_idf", false},
                  {"rescale_baseline", options.rescale_baseline
                                           ? nlohmann::json(*options.rescale_baseline)
                                           : nlohmann::json(nullptr)}};
  return rep;
}

}  // namespace probe
