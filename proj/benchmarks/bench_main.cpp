/*
 *  Copyright 2026 The speechnas Authors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 */

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "speechnas/archspace.hpp"
#include "speechnas/bayesopt.hpp"
#include "speechnas/graph.hpp"
#include "speechnas/network.hpp"

using namespace speechnas;

namespace {

NdArray random_array(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  NdArray a(shape, DType::F32);
  for (auto& v : a.data()) v = u(rng);
  return a;
}

void BM_Conv1d(benchmark::State& state) {
  const auto C = static_cast<std::size_t>(state.range(0));
  const NdArray x = random_array({8, 100, C}, 1);
  const NdArray w = random_array({3, C, C}, 2);
  const NdArray b = random_array({C}, 3);
  for (auto _ : state) {
    Graph g(DType::F32);
    benchmark::DoNotOptimize(g.value(conv1d(g, g.constant(x), g.constant(w), g.constant(b), 3)).raw());
  }
  state.SetItemsProcessed(state.iterations() * 8 * 100 * 3 * static_cast<std::int64_t>(C * C));
}
BENCHMARK(BM_Conv1d)->Arg(32)->Arg(64)->Arg(128);

void BM_ConvForwardBackward(benchmark::State& state) {
  ParamStore ps;
  Parameter& w = ps.add("w", random_array({3, 64, 64}, 2));
  Parameter& b = ps.add("b", random_array({64}, 3));
  const NdArray x = random_array({8, 100, 64}, 1);
  for (auto _ : state) {
    Graph g(DType::F32);
    g.backward(sum(g, conv1d(g, g.constant(x), g.param(w), g.param(b), 2)));
  }
}
BENCHMARK(BM_ConvForwardBackward);

void BM_DeskForward(benchmark::State& state) {
  NetConfig cfg;
  cfg.input_dim = 30;
  cfg.stem_channels = 32;
  cfg.embedding_dim = 64;
  cfg.bottleneck_ratio = 1.0;
  cfg.num_speakers = 32;
  const SearchSpace space = make_space("desk");
  const Network net = Network::supernet(cfg, space, 1);
  const ArchCode a = sample_uniform(space, 5);
  const NdArray x = random_array({32, 50, 30}, 4);
  for (auto _ : state) {
    Graph g(DType::F32);
    benchmark::DoNotOptimize(g.value(forward_eval(g, net, a, g.constant(x), false).embeddings).raw());
  }
}
BENCHMARK(BM_DeskForward);

void BM_GpFit(benchmark::State& state) {
  const SearchSpace space = make_space("space3");
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  std::vector<Observation> obs;
  for (std::int64_t i = 0; i < state.range(0); ++i) obs.push_back({sample_uniform(space, rng), u(rng)});
  for (auto _ : state) benchmark::DoNotOptimize(GPModel::fit(obs).lml());
}
BENCHMARK(BM_GpFit)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
