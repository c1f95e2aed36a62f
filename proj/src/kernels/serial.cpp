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

// Single-threaded reference kernels. Written for clarity; the parallel
// versions in parallel.cpp are checked against these.

#include <algorithm>
#include <cmath>
#include <limits>

#include "probe/kernels.hpp"

namespace probe::kernels::serial {

void matmul_forward(std::span<float> out, std::span<const float> in,
                    std::span<const float> weight, std::span<const float> bias,
                    MatmulShape s) {
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t o = 0; o < s.out; ++o) {
      float acc = bias.empty() ? 0.0f : bias[o];
      for (std::size_t i = 0; i < s.in; ++i) {
        acc += in[r * s.in + i] * weight[o * s.in + i];
      }
      out[r * s.out + o] = acc;
    }
  }
}

void matmul_backward(std::span<float> din, std::span<float> dweight,
                     std::span<float> dbias, std::span<const float> dout,
                     std::span<const float> in, std::span<const float> weight,
                     MatmulShape s) {
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t o = 0; o < s.out; ++o) {
      const float g = dout[r * s.out + o];
      if (!din.empty()) {
        for (std::size_t i = 0; i < s.in; ++i) {
          din[r * s.in + i] += g * weight[o * s.in + i];
        }
      }
      if (!dweight.empty()) {
        for (std::size_t i = 0; i < s.in; ++i) {
          dweight[o * s.in + i] += g * in[r * s.in + i];
        }
      }
      if (!dbias.empty()) dbias[o] += g;
    }
  }
}

void layernorm_forward(std::span<float> out, std::span<float> mean,
                       std::span<float> rstd, std::span<const float> in,
                       std::span<const float> weight,
                       std::span<const float> bias, std::size_t rows,
                       std::size_t dim) {
  constexpr float eps = 1e-5f;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = in.data() + r * dim;
    float m = 0.0f;
    for (std::size_t i = 0; i < dim; ++i) m += x[i];
    m /= static_cast<float>(dim);
    float var = 0.0f;
    for (std::size_t i = 0; i < dim; ++i) var += (x[i] - m) * (x[i] - m);
    var /= static_cast<float>(dim);
    const float rs = 1.0f / std::sqrt(var + eps);
    for (std::size_t i = 0; i < dim; ++i) {
      out[r * dim + i] = (x[i] - m) * rs * weight[i] + bias[i];
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
  for (std::size_t r = 0; r < rows; ++r) {
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
    for (std::size_t i = 0; i < dim; ++i) {
      const float norm = (x[i] - mean[r]) * rstd[r];
      const float dnorm = weight[i] * g[i];
      if (!dbias.empty()) dbias[i] += g[i];
      if (!dweight.empty()) dweight[i] += norm * g[i];
      if (!din.empty()) {
        din[r * dim + i] +=
            (dnorm - dnorm_mean - norm * dnorm_norm_mean) * rstd[r];
      }
    }
  }
}

void attention_forward(std::span<float> out, std::span<float> probs,
                       std::span<const float> q, std::span<const float> k,
                       std::span<const float> v, AttentionShape s) {
  const std::size_t hs = s.dim / s.heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hs));
  for (std::size_t h = 0; h < s.heads; ++h) {
    for (std::size_t t = 0; t < s.seq; ++t) {
      float* p = probs.data() + (h * s.seq + t) * s.seq;
      const std::size_t limit = s.causal ? t + 1 : s.seq;
      float maxv = -std::numeric_limits<float>::infinity();
      for (std::size_t u = 0; u < limit; ++u) {
        float dot = 0.0f;
        for (std::size_t i = 0; i < hs; ++i) {
          dot += q[t * s.dim + h * hs + i] * k[u * s.dim + h * hs + i];
        }
        p[u] = dot * scale;
        if (p[u] > maxv) maxv = p[u];
      }
      float sum = 0.0f;
      for (std::size_t u = 0; u < limit; ++u) {
        p[u] = std::exp(p[u] - maxv);
        sum += p[u];
      }
      for (std::size_t u = 0; u < s.seq; ++u) {
        p[u] = u < limit ? p[u] / sum : 0.0f;
      }
      for (std::size_t i = 0; i < hs; ++i) {
        float acc = 0.0f;
        for (std::size_t u = 0; u < limit; ++u) {
          acc += p[u] * v[u * s.dim + h * hs + i];
        }
        out[t * s.dim + h * hs + i] = acc;
      }
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
  for (std::size_t h = 0; h < s.heads; ++h) {
    for (std::size_t t = 0; t < s.seq; ++t) {
      const float* p = probs.data() + (h * s.seq + t) * s.seq;
      const std::size_t limit = s.causal ? t + 1 : s.seq;
      float dot_pd = 0.0f;
      for (std::size_t u = 0; u < limit; ++u) {
        float dp = 0.0f;
        for (std::size_t i = 0; i < hs; ++i) {
          dp += dout[t * s.dim + h * hs + i] * v[u * s.dim + h * hs + i];
          dv[u * s.dim + h * hs + i] += p[u] * dout[t * s.dim + h * hs + i];
        }
        dot_pd += p[u] * dp;
      }
      for (std::size_t u = 0; u < limit; ++u) {
        float dp = 0.0f;
        for (std::size_t i = 0; i < hs; ++i) {
          dp += dout[t * s.dim + h * hs + i] * v[u * s.dim + h * hs + i];
        }
        const float dscore = p[u] * (dp - dot_pd) * scale;
        for (std::size_t i = 0; i < hs; ++i) {
          dq[t * s.dim + h * hs + i] += dscore * k[u * s.dim + h * hs + i];
          dk[u * s.dim + h * hs + i] += dscore * q[t * s.dim + h * hs + i];
        }
      }
    }
  }
}

namespace {
constexpr float kGeluScale = 0.7978845608028654f;  // sqrt(2/pi)
}

void gelu_forward(std::span<float> out, std::span<const float> in) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    const float x = in[i];
    const float cube = 0.044715f * x * x * x;
    out[i] = 0.5f * x * (1.0f + std::tanh(kGeluScale * (x + cube)));
  }
}

void gelu_backward(std::span<float> din, std::span<const float> in,
                   std::span<const float> dout) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    const float x = in[i];
    const float cube = 0.044715f * x * x * x;
    const float arg = kGeluScale * (x + cube);
    const float th = std::tanh(arg);
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
  for (std::size_t r = 0; r < rows; ++r) {
    const float* z = logits.data() + r * vocab;
    double maxv = z[0];
    for (std::size_t i = 1; i < vocab; ++i) maxv = std::max<double>(maxv, z[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < vocab; ++i) sum += std::exp(z[i] - maxv);
    const double lse = maxv + std::log(sum);
    const auto target = static_cast<std::size_t>(targets[r]);
    target_logprob[r] = z[target] - lse;
    if (!dlogits.empty()) {
      for (std::size_t i = 0; i < vocab; ++i) {
        const double p = std::exp(z[i] - lse);
        const double g = p - (i == target ? 1.0 : 0.0);
        dlogits[r * vocab + i] += static_cast<float>(g * scale);
      }
    }
  }
}

void layer_cosine_mean(std::span<double> out, std::span<const float> query,
                       std::span<const float> candidates, std::size_t count,
                       std::size_t layers, std::size_t dim,
                       std::size_t start_layer) {
  for (std::size_t c = 0; c < count; ++c) {
    const float* cand = candidates.data() + c * layers * dim;
    double total = 0.0;
    bool degenerate = false;
    for (std::size_t l = start_layer; l <= layers; ++l) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double a = query[(l - 1) * dim + i];
        const double b = cand[(l - 1) * dim + i];
        dot += a * b;
        na += a * a;
        nb += b * b;
      }
      if (na == 0.0 || nb == 0.0) degenerate = true;
      total += std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    }
    out[c] = degenerate ? std::numeric_limits<double>::quiet_NaN()
                        : total / static_cast<double>(layers - start_layer + 1);
  }
}

}  // namespace probe::kernels::serial
