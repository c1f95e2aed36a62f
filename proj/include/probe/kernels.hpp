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

#include <cstddef>
#include <span>

// Dense kernels for the reference transformer. All buffers are row-major.
//
// Two implementations share every signature: `probe::kernels` is the
// OpenMP-parallel path used by the model, `probe::kernels::serial` is the
// straightforward single-threaded reference kept for tests and benchmarks.
// Parallel kernels partition outputs so that each element is produced by one
// thread in a fixed order; results do not depend on the thread count.
//
// Backward kernels accumulate (+=) into gradient buffers. Passing an empty
// span for a gradient skips that computation.

namespace probe::kernels {

struct MatmulShape {
  std::size_t rows;  // sequence positions
  std::size_t in;
  std::size_t out;
};

struct AttentionShape {
  std::size_t seq;
  std::size_t dim;
  std::size_t heads;
  bool causal;
};

// out[r, o] = bias[o] + sum_i in[r, i] * weight[o, i]
void matmul_forward(std::span<float> out, std::span<const float> in,
                    std::span<const float> weight, std::span<const float> bias,
                    MatmulShape s);
void matmul_backward(std::span<float> din, std::span<float> dweight,
                     std::span<float> dbias, std::span<const float> dout,
                     std::span<const float> in, std::span<const float> weight,
                     MatmulShape s);

void layernorm_forward(std::span<float> out, std::span<float> mean,
                       std::span<float> rstd, std::span<const float> in,
                       std::span<const float> weight,
                       std::span<const float> bias, std::size_t rows,
                       std::size_t dim);
void layernorm_backward(std::span<float> din, std::span<float> dweight,
                        std::span<float> dbias, std::span<const float> dout,
                        std::span<const float> in,
                        std::span<const float> weight,
                        std::span<const float> mean,
                        std::span<const float> rstd, std::size_t rows,
                        std::size_t dim);

// Multi-head scaled dot-product attention over separate q/k/v buffers of
// shape (seq, dim). `probs` holds (heads, seq, seq) softmax weights.
void attention_forward(std::span<float> out, std::span<float> probs,
                       std::span<const float> q, std::span<const float> k,
                       std::span<const float> v, AttentionShape s);
void attention_backward(std::span<float> dq, std::span<float> dk,
                        std::span<float> dv, std::span<const float> dout,
                        std::span<const float> probs, std::span<const float> q,
                        std::span<const float> k, std::span<const float> v,
                        AttentionShape s);

// tanh-approximated GELU.
void gelu_forward(std::span<float> out, std::span<const float> in);
void gelu_backward(std::span<float> din, std::span<const float> in,
                   std::span<const float> dout);

// Row-wise log-softmax cross entropy. Writes the target log-probability of
// each row to `target_logprob` and, when `dlogits` is non-empty, accumulates
// scale * (softmax - onehot) into it.
void softmax_cross_entropy(std::span<double> target_logprob,
                           std::span<float> dlogits,
                           std::span<const float> logits,
                           std::span<const int> targets, std::size_t rows,
                           std::size_t vocab, float scale);

// Mean cosine over layers [start_layer, layers] (1-based) between `query`
// (layers x dim) and each of `count` candidate stacks laid out back to back.
// A zero-norm layer yields NaN for that candidate.
void layer_cosine_mean(std::span<double> out, std::span<const float> query,
                       std::span<const float> candidates, std::size_t count,
                       std::size_t layers, std::size_t dim,
                       std::size_t start_layer);

namespace serial {

void matmul_forward(std::span<float> out, std::span<const float> in,
                    std::span<const float> weight, std::span<const float> bias,
                    MatmulShape s);
void matmul_backward(std::span<float> din, std::span<float> dweight,
                     std::span<float> dbias, std::span<const float> dout,
                     std::span<const float> in, std::span<const float> weight,
                     MatmulShape s);
void layernorm_forward(std::span<float> out, std::span<float> mean,
                       std::span<float> rstd, std::span<const float> in,
                       std::span<const float> weight,
                       std::span<const float> bias, std::size_t rows,
                       std::size_t dim);
void layernorm_backward(std::span<float> din, std::span<float> dweight,
                        std::span<float> dbias, std::span<const float> dout,
                        std::span<const float> in,
                        std::span<const float> weight,
                        std::span<const float> mean,
                        std::span<const float> rstd, std::size_t rows,
                        std::size_t dim);
void attention_forward(std::span<float> out, std::span<float> probs,
                       std::span<const float> q, std::span<const float> k,
                       std::span<const float> v, AttentionShape s);
void attention_backward(std::span<float> dq, std::span<float> dk,
                        std::span<float> dv, std::span<const float> dout,
                        std::span<const float> probs, std::span<const float> q,
                        std::span<const float> k, std::span<const float> v,
                        AttentionShape s);
void gelu_forward(std::span<float> out, std::span<const float> in);
void gelu_backward(std::span<float> din, std::span<const float> in,
                   std::span<const float> dout);
void softmax_cross_entropy(std::span<double> target_logprob,
                           std::span<float> dlogits,
                           std::span<const float> logits,
                           std::span<const int> targets, std::size_t rows,
                           std::size_t vocab, float scale);
void layer_cosine_mean(std::span<double> out, std::span<const float> query,
                       std::span<const float> candidates, std::size_t count,
                       std::size_t layers, std::size_t dim,
                       std::size_t start_layer);

}  // namespace serial

// Sets the OpenMP team size used by the parallel kernels (0 keeps the
// runtime default).
void set_num_threads(int threads);

}  // namespace probe::kernels
