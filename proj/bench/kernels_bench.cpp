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

// Serial reference kernels against their OpenMP counterparts at model-sized
// shapes. Run with OMP_NUM_THREADS to vary the team size.

#include <benchmark/benchmark.h>

#include <cstddef>
#include <random>
#include <vector>

#include "probe/kernels.hpp"

namespace {

namespace k = probe::kernels;

std::vector<float> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

template <bool Serial>
void BM_MatmulForward(benchmark::State& state) {
  const k::MatmulShape s{static_cast<std::size_t>(state.range(0)), 256, 1024};
  const auto in = random_buffer(s.rows * s.in, 1);
  const auto w = random_buffer(s.out * s.in, 2);
  const auto b = random_buffer(s.out, 3);
  std::vector<float> out(s.rows * s.out);
  for (auto _ : state) {
    if constexpr (Serial) {
      k::serial::matmul_forward(out, in, w, b, s);
    } else {
      k::matmul_forward(out, in, w, b, s);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * s.rows * s.in * s.out);
}

template <bool Serial>
void BM_MatmulBackward(benchmark::State& state) {
  const k::MatmulShape s{static_cast<std::size_t>(state.range(0)), 256, 1024};
  const auto in = random_buffer(s.rows * s.in, 1);
  const auto w = random_buffer(s.out * s.in, 2);
  const auto dout = random_buffer(s.rows * s.out, 3);
  std::vector<float> din(s.rows * s.in), dw(s.out * s.in), db(s.out);
  for (auto _ : state) {
    if constexpr (Serial) {
      k::serial::matmul_backward(din, dw, db, dout, in, w, s);
    } else {
      k::matmul_backward(din, dw, db, dout, in, w, s);
    }
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * s.rows * s.in * s.out);
}

template <bool Serial>
void BM_AttentionForward(benchmark::State& state) {
  const k::AttentionShape s{static_cast<std::size_t>(state.range(0)), 256, 4, true};
  const auto q = random_buffer(s.seq * s.dim, 1);
  const auto kk = random_buffer(s.seq * s.dim, 2);
  const auto v = random_buffer(s.seq * s.dim, 3);
  std::vector<float> out(s.seq * s.dim), probs(s.heads * s.seq * s.seq);
  for (auto _ : state) {
    if constexpr (Serial) {
      k::serial::attention_forward(out, probs, q, kk, v, s);
    } else {
      k::attention_forward(out, probs, q, kk, v, s);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Serial>
void BM_SoftmaxCrossEntropy(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0)), vocab = 8192;
  const auto logits = random_buffer(rows * vocab, 1);
  std::vector<int> targets(rows);
  for (std::size_t r = 0; r < rows; ++r) targets[r] = static_cast<int>(r * 37 % vocab);
  std::vector<double> lp(rows);
  std::vector<float> dlogits(rows * vocab);
  for (auto _ : state) {
    if constexpr (Serial) {
      k::serial::softmax_cross_entropy(lp, dlogits, logits, targets, rows, vocab, 1.0f);
    } else {
      k::softmax_cross_entropy(lp, dlogits, logits, targets, rows, vocab, 1.0f);
    }
    benchmark::DoNotOptimize(lp.data());
  }
}

template <bool Serial>
void BM_LayerCosineMean(benchmark::State& state) {
  const std::size_t count = static_cast<std::size_t>(state.range(0)), layers = 12, dim = 256;
  const auto query = random_buffer(layers * dim, 1);
  const auto candidates = random_buffer(count * layers * dim, 2);
  std::vector<double> out(count);
  for (auto _ : state) {
    if constexpr (Serial) {
      k::serial::layer_cosine_mean(out, query, candidates, count, layers, dim, 1);
    } else {
      k::layer_cosine_mean(out, query, candidates, count, layers, dim, 1);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * count);
}

BENCHMARK(BM_MatmulForward<true>)->Name("matmul_forward/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_MatmulForward<false>)->Name("matmul_forward/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_MatmulBackward<true>)->Name("matmul_backward/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_MatmulBackward<false>)->Name("matmul_backward/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_AttentionForward<true>)->Name("attention_forward/serial")->Arg(128)->Arg(512);
BENCHMARK(BM_AttentionForward<false>)->Name("attention_forward/parallel")->Arg(128)->Arg(512);
BENCHMARK(BM_SoftmaxCrossEntropy<true>)->Name("softmax_xent/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_SoftmaxCrossEntropy<false>)->Name("softmax_xent/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_LayerCosineMean<true>)->Name("layer_cosine_mean/serial")->Arg(1000)->Arg(20000);
BENCHMARK(BM_LayerCosineMean<false>)->Name("layer_cosine_mean/parallel")->Arg(1000)->Arg(20000);

}  // namespace

BENCHMARK_MAIN();
