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

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "probe/kernels.hpp"

namespace probe::kernels {

namespace {

// Work below this many multiply-adds runs on the calling thread; spawning a
// team costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 14;

inline float dot(const float* a, const float* b, std::size_t n) {
  float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline void axpy(float* y, float alpha, const float* x, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

constexpr float kGeluScale = 0.7978845608028654f;

}  // namespace

void set_num_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

void matmul_forward(std::span<float> out, std::span<const float> in,
                    std::span<const float> weight, std::span<const float> bias,
                    MatmulShape s) {
  const bool big = s.rows * s.in * s.out >= kParallelWork;
  const auto rows = static_cast<std::ptrdiff_t>(s.rows);
#pragma omp parallel for if (big) schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const float* x = in.data() + r * s.in;
    float* y = out.data() + r * s.out;
    for (std::size_t o = 0; o < s.out; ++o) {
      y[o] = (bias.empty() ? 0.0f : bias[o]) +
             dot(x, weight.data() + o * s.in, s.in);
    }
  }
}

void matmul_backward(std::span<float> din, std::span<float> dweight,
                     std::span<float> dbias, std::span<const float> dout,
                     std::span<const float> in, std::span<const float> weight,
                     MatmulShape s) {
  const bool big = s.rows * s.in * s.out >= kParallelWork;
  if (!din.empty()) {
    const auto rows = static_cast<std::ptrdiff_t>(s.rows);
#pragma omp parallel for if (big) schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
      const float* g = dout.data() + r * s.out;
      float* dx = din.data() + r * s.in;
      for (std::size_t o = 0; o < s.out; ++o) {
        if (g[o] != 0.0f) axpy(dx, g[o], weight.data() + o * s.in, s.in);
      }
    }
  }
  if (!dweight.empty() || !dbias.empty()) {
    const auto outs = static_cast<std::ptrdiff_t>(s.out);
#pragma omp parallel for if (big) schedule(static)
    for (std::ptrdiff_t o = 0; o < outs; ++o) {
      float bias_acc = 0.0f;
      for (std::size_t r = 0; r < s.rows; ++r) {
        const float g = dout[r * s.out + o];
        bias_acc += g;
        if (!dweight.empty() && g != 0.0f) {
          axpy(dweight.data() + o * s.in, g, in.data() + r * s.in, s.in);
        }
      }
      if (!dbias.empty()) dbias[o] += bias_acc;
    }
  }
}

void layernorm_forward(std::span<float> out, std::span<float> mean,
                       std::span<float> rstd, std::span<const float> in,
                       std::span<const float> weight,
                       std::span<const float> bias, std::size_t rows,
                       std::size_t dim) {
  constexpr float eps = 1e-5f;
  const bool big = rows * dim >= kParallelWork;
  const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for if (big) schedule(static)
  for (std::ptrdiff_t r = 0; r < nrows; ++r) {
    const float* x = in.data() + r * dim;
    float m = 0.0f;
    for (std::size_t i = 0; i < dim; ++i) m += x[i];
    m /= static_cast<float>(dim);
    float var = 0.0f;
    for (std::size_t i = 0; i < dim; ++i) var += (x[i] - m) * (x[i] - m);
    var /= static_cast<float>(dim);
    const float rs = 1.0f / std::sqrt(var + eps);
    float* y = out.data() + r * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      y[i] = (x[i] - m) * rs * weight[i] + bias[i];
    }
    mean[r] = m;
    rstd[r] = rs;
  }
}

void layernorm_backward(std::span<float> din, std::span<float> dweight,
                        std::span<float> dbias, std::span<const float> dout,
                        std::span<const float> in,
                        std::span<const float> weight,
                        std::span<const float> mean,
                        std::span<const float> rstd, std::size_t rows,
                        std::size_t dim) {
  const bool big = rows * dim >= kParallelWork;
  if (!din.empty()) {
    const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for if (big) schedule(static)
    for (std::ptrdiff_t r = 0; r < nrows; ++r) {
      const float* g = dout.data() + r * dim;
      const float* x = in.data() + r * dim;
      float dnorm_mean = 0.0f;
      float dnorm_norm_mean = 0.0f;
      for (std::size_t i = 0; i < dim; ++i) {
        const float norm = (x[i] - mean[r]) * rstd[r];
        const float dnorm = weight[i] * g[i];
        dnorm_mean += dnorm;
        dnorm_norm_mean += dnorm * norm;
      }
      dnorm_mean /= static_cast<float>(dim);
      dnorm_norm_mean /= static_cast<float>(dim);
      float* dx = din.data() + r * dim;
      for (std::size_t i = 0; i < dim; ++i) {
        const float norm = (x[i] - mean[r]) * rstd[r];
        const float dnorm = weight[i] * g[i];
        dx[i] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * rstd[r];
      }
    }
  }
  if (!dweight.empty() || !dbias.empty()) {
    for (std::size_t r = 0; r < rows; ++r) {
      const float* g = dout.data() + r * dim;
      const float* x = in.data() + r * dim;
      for (std::size_t i = 0; i < dim; ++i) {
        if (!dbias.empty()) dbias[i] += g[i];
        if (!dweight.empty()) dweight[i] += (x[i] - mean[r]) * rstd[r] * g[i];
      }
    }
  }
}

void attention_forward(std::span<float> out, std::span<float> probs,
                       std::span<const float> q, std::span<const float> k,
                       std::span<const float> v, AttentionShape s) {
  const std::size_t hs = s.dim / s.heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hs));
  const bool big = s.seq * s.seq * s.dim >= kParallelWork;
  const auto work = static_cast<std::ptrdiff_t>(s.heads * s.seq);
#pragma omp parallel for if (big) schedule(static)
  for (std::ptrdiff_t ht = 0; ht < work; ++ht) {
    const std::size_t h = static_cast<std::size_t>(ht) / s.seq;
    const std::size_t t = static_cast<std::size_t>(ht) % s.seq;
    float* p = probs.data() + (h * s.seq + t) * s.seq;
    const std::size_t limit = s.causal ? t + 1 : s.seq;
    const float* qt = q.data() + t * s.dim + h * hs;
    float maxv = -std::numeric_limits<float>::infinity();
    for (std::size_t u = 0; u < limit; ++u) {
      p[u] = dot(qt, k.data() + u * s.dim + h * hs, hs) * scale;
      maxv = std::max(maxv, p[u]);
    }
    float sum = 0.0f;
    for (std::size_t u = 0; u < limit; ++u) {
      p[u] = std::exp(p[u] - maxv);
      sum += p[u];
    }
    const float inv = 1.0f / sum;
    for (std::size_t u = 0; u < limit; ++u) p[u] *= inv;
    std::fill(p + limit, p + s.seq, 0.0f);
    float* y = out.data() + t * s.dim + h * hs;
    std::fill(y, y + hs, 0.0f);
    for (std::size_t u = 0; u < limit; ++u) {
      axpy(y, p[u], v.data() + u * s.dim + h * hs, hs);
    }
  }
}

void attention_backward(std::span<float> dq, std::span<float> dk,
                        std::span<float> dv, std::span<const float> dout,
                        std::span<const float> probs, std::span<const float> q,
                        std::span<const float> k, std::span<const float> v,
                        AttentionShape s) {
  const std::size_t hs = s.dim / s.heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hs));
  const bool big = s.seq * s.seq * s.dim >= kParallelWork;
  const auto heads = static_cast<std::ptrdiff_t>(s.heads);
  // Each head owns a disjoint column block of dq/dk/dv.
#pragma omp parallel for if (big) schedule(static)
  for (std::ptrdiff_t hh = 0; hh < heads; ++hh) {
    const auto h = static_cast<std::size_t>(hh);
    std::vector<float> dp(s.seq);
    for (std::size_t t = 0; t < s.seq; ++t) {
      const float* p = probs.data() + (h * s.seq + t) * s.seq;
      const std::size_t limit = s.causal ? t + 1 : s.seq;
      const float* g = dout.data() + t * s.dim + h * hs;
      float dot_pd = 0.0f;
      for (std::size_t u = 0; u < limit; ++u) {
        dp[u] = dot(g, v.data() + u * s.dim + h * hs, hs);
        dot_pd += p[u] * dp[u];
        axpy(dv.data() + u * s.dim + h * hs, p[u], g, hs);
      }
      float* dqt = dq.data() + t * s.dim + h * hs;
      const float* qt = q.data() + t * s.dim + h * hs;
      for (std::size_t u = 0; u < limit; ++u) {
        const float dscore = p[u] * (dp[u] - dot_pd) * scale;
        axpy(dqt, dscore, k.data() + u * s.dim + h * hs, hs);
        axpy(dk.data() + u * s.dim + h * hs, dscore, qt, hs);
      }
    }
  }
}

void gelu_forward(std::span<float> out, std::span<const float> in) {
  const auto n = static_cast<std::ptrdiff_t>(in.size());
#pragma omp parallel for if (in.size() >= kParallelWork) schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const float x = in[i];
    const float cube = 0.044715f * x * x * x;
    out[i] = 0.5f * x * (1.0f + std::tanh(kGeluScale * (x + cube)));
  }
}

void gelu_backward(std::span<float> din, std::span<const float> in,
                   std::span<const float> dout) {
  const auto n = static_cast<std::ptrdiff_t>(in.size());
#pragma omp parallel for if (in.size() >= kParallelWork) schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const float x = in[i];
    const float cube = 0.044715f * x * x * x;
    const float th = std::tanh(kGeluScale * (x + cube));
    const float sech2 = 1.0f - th * th;
    const float local = 0.5f * (1.0f + th) +
                        x * 0.5f * sech2 * kGeluScale *
                            (1.0f + 3.0f * 0.044715f * x * x);
    din[i] += local * dout[i];
  }
}

void softmax_cross_entropy(std::span<double> target_logprob,
                           std::span<float> dlogits,
                           std::span<const float> logits,
                           std::span<const int> targets, std::size_t rows,
                           std::size_t vocab, float scale) {
  const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for if (rows * vocab >= kParallelWork) schedule(static)
  for (std::ptrdiff_t r = 0; r < nrows; ++r) {
    const float* z = logits.data() + r * vocab;
    double maxv = z[0];
    for (std::size_t i = 1; i < vocab; ++i) maxv = std::max<double>(maxv, z[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < vocab; ++i) sum += std::exp(z[i] - maxv);
    const double lse = maxv + std::log(sum);
    const auto target = static_cast<std::size_t>(targets[r]);
    target_logprob[r] = z[target] - lse;
    if (!dlogits.empty()) {
      float* d = dlogits.data() + r * vocab;
      for (std::size_t i = 0; i < vocab; ++i) {
        const double g = std::exp(z[i] - lse) - (i == target ? 1.0 : 0.0);
        d[i] += static_cast<float>(g * scale);
      }
    }
  }
}

void layer_cosine_mean(std::span<double> out, std::span<const float> query,
                       std::span<const float> candidates, std::size_t count,
                       std::size_t layers, std::size_t dim,
                       std::size_t start_layer) {
  const auto n = static_cast<std::ptrdiff_t>(count);
  const std::size_t used = layers - start_layer + 1;
  std::vector<double> query_norm(layers + 1, 0.0);
  for (std::size_t l = start_layer; l <= layers; ++l) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double a = query[(l - 1) * dim + i];
      acc += a * a;
    }
    query_norm[l] = std::sqrt(acc);
  }
#pragma omp parallel for if (count * used * dim >= kParallelWork) schedule(static)
  for (std::ptrdiff_t c = 0; c < n; ++c) {
    const float* cand = candidates.data() + c * layers * dim;
    double total = 0.0;
    bool degenerate = false;
    for (std::size_t l = start_layer; l <= layers; ++l) {
      double d = 0.0, nb = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double a = query[(l - 1) * dim + i];
        const double b = cand[(l - 1) * dim + i];
        d += a * b;
        nb += b * b;
      }
      if (query_norm[l] == 0.0 || nb == 0.0) degenerate = true;
      total += std::clamp(d / (query_norm[l] * std::sqrt(nb)), -1.0, 1.0);
    }
    out[c] = degenerate ? std::numeric_limits<double>::quiet_NaN()
                        : total / static_cast<double>(used);
  }
}

}  // namespace probe::kernels
