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

#pragma once

#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "speechnas/losses.hpp"
#include "speechnas/network.hpp"

namespace speechnas::testing {

struct OpCase {
  std::string name;
  OpFn op;
  std::vector<NdArray> inputs;
};

/// Every differentiable operator with random inputs drawn from `seed`.
inline std::vector<OpCase> op_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto r = [&](Shape s) { return random_array(s, rng); };
  auto rz = [&](Shape s) { return random_away_from_zero(s, rng); };
  std::vector<OpCase> cases;
  cases.push_back({"add", [](Graph& g, std::span<const NodeId> x) { return add(g, x[0], x[1]); }, {r({3, 4}), r({3, 4})}});
  cases.push_back({"mul", [](Graph& g, std::span<const NodeId> x) { return mul(g, x[0], x[1]); }, {r({2, 3, 2}), r({2, 3, 2})}});
  cases.push_back({"scale", [](Graph& g, std::span<const NodeId> x) { return scale(g, x[0], -1.7); }, {r({5})}});
  cases.push_back({"sum", [](Graph& g, std::span<const NodeId> x) { return sum(g, x[0]); }, {r({3, 2})}});
  cases.push_back({"mean", [](Graph& g, std::span<const NodeId> x) { return mean(g, x[0]); }, {r({4, 3})}});
  cases.push_back({"relu", [](Graph& g, std::span<const NodeId> x) { return relu(g, x[0]); }, {rz({3, 5})}});
  for (std::size_t axis = 0; axis < 3; ++axis) {
    cases.push_back({"softmax_axis" + std::to_string(axis),
                     [axis](Graph& g, std::span<const NodeId> x) { return softmax(g, x[0], axis); },
                     {r({2, 3, 4})}});
  }
  cases.push_back({"concat_axis1",
                   [](Graph& g, std::span<const NodeId> x) {
                     const NodeId parts[] = {x[0], x[1]};
                     return concat(g, parts, 1);
                   },
                   {r({2, 3}), r({2, 2})}});
  cases.push_back({"concat_axis2",
                   [](Graph& g, std::span<const NodeId> x) {
                     const NodeId parts[] = {x[0], x[1], x[2]};
                     return concat(g, parts, 2);
                   },
                   {r({2, 3, 1}), r({2, 3, 2}), r({2, 3, 3})}});
  cases.push_back({"slice", [](Graph& g, std::span<const NodeId> x) { return slice(g, x[0], 1, 1, 3); }, {r({2, 4, 3})}});
  cases.push_back({"reshape", [](Graph& g, std::span<const NodeId> x) { return reshape(g, x[0], {3, 4}); }, {r({2, 6})}});
  cases.push_back({"affine_bias", [](Graph& g, std::span<const NodeId> x) { return affine(g, x[0], x[1], x[2]); },
                   {r({2, 3, 4}), r({4, 5}), r({5})}});
  cases.push_back({"affine_nobias", [](Graph& g, std::span<const NodeId> x) { return affine(g, x[0], x[1], std::nullopt); },
                   {r({3, 4}), r({4, 2})}});
  cases.push_back({"conv1d_d1", [](Graph& g, std::span<const NodeId> x) { return conv1d(g, x[0], x[1], x[2], 1); },
                   {r({6, 3}), r({3, 3, 2}), r({2})}});
  cases.push_back({"conv1d_d3_batched", [](Graph& g, std::span<const NodeId> x) { return conv1d(g, x[0], x[1], x[2], 3); },
                   {r({2, 9, 2}), r({3, 2, 3}), r({3})}});
  cases.push_back({"conv1d_k5_d2", [](Graph& g, std::span<const NodeId> x) { return conv1d(g, x[0], x[1], x[2], 2); },
                   {r({2, 7, 2}), r({5, 2, 2}), r({2})}});
  cases.push_back({"scale_channels", [](Graph& g, std::span<const NodeId> x) { return scale_channels(g, x[0], x[1]); },
                   {r({2, 4, 3}), r({2, 3})}});
  cases.push_back({"l2_normalize_rows", [](Graph& g, std::span<const NodeId> x) { return l2_normalize(g, x[0], 1); },
                   {r({3, 4})}});
  cases.push_back({"l2_normalize_cols", [](Graph& g, std::span<const NodeId> x) { return l2_normalize(g, x[0], 0); },
                   {r({4, 3})}});
  cases.push_back({"batch_norm_train",
                   [](Graph& g, std::span<const NodeId> x) { return batch_norm_train(g, x[0], x[1], x[2], {}); },
                   {r({2, 5, 3}), r({3}), r({3})}});
  {
    NdArray rm = r({3});
    NdArray rv = random_array({3}, rng, 0.5, 2.0);
    cases.push_back({"batch_norm_eval",
                     [rm, rv](Graph& g, std::span<const NodeId> x) {
                       return batch_norm_eval(g, x[0], x[1], x[2], g.constant(rm), g.constant(rv));
                     },
                     {r({4, 3}), r({3}), r({3})}});
  }
  cases.push_back({"stats_pool", [](Graph& g, std::span<const NodeId> x) { return stats_pool(g, x[0]); }, {r({7, 3})}});
  cases.push_back({"stats_pool_batched", [](Graph& g, std::span<const NodeId> x) { return stats_pool(g, x[0]); },
                   {r({2, 6, 3})}});
  const std::vector<int> labels = {2, 0, 1, 2};
  cases.push_back({"cross_entropy", [labels](Graph& g, std::span<const NodeId> x) { return cross_entropy(g, x[0], labels); },
                   {random_array({4, 3}, rng, -3.0, 3.0)}});
  cases.push_back({"additive_margin_logits",
                   [labels](Graph& g, std::span<const NodeId> x) {
                     return additive_margin_logits(g, x[0], labels, 3.0, 0.2);
                   },
                   {random_array({4, 3}, rng, -0.9, 0.9)}});
  cases.push_back({"hyperspherical_energy",
                   [labels](Graph& g, std::span<const NodeId> x) {
                     return hyperspherical_energy(g, x[0], labels, 0.5);
                   },
                   {r({4, 3})}});
  cases.push_back({"aam_mhe",
                   [labels](Graph& g, std::span<const NodeId> x) {
                     AamMheOptions o;
                     o.scale = 4.0;
                     o.lambda = 0.1;
                     return aam_mhe(g, x[0], x[1], labels, o);
                   },
                   {r({4, 5}), r({5, 3})}});
  return cases;
}

/// Tiny single-layer supernet for whole-block checks.
inline Network tiny_block_net(std::uint64_t seed) {
  NetConfig cfg;
  cfg.input_dim = 3;
  cfg.stem_channels = 4;
  cfg.stem_kernel = 3;
  cfg.embedding_dim = 3;
  cfg.num_speakers = 2;
  cfg.bottleneck_ratio = 2.0;
  Network net(cfg, {SlotChoice{3, 3, 2}}, seed);
  // Non-trivial normalisation parameters so their gradients are exercised.
  std::mt19937_64 rng(seed + 17);
  for (auto& p : net.params()) {
    if (p.name.find("gamma") != std::string::npos || p.name.find("beta") != std::string::npos ||
        p.name.ends_with(".b")) {
      p.value = random_array(p.value.shape(), rng, 0.5, 1.5);
    }
  }
  return net;
}

}  // namespace speechnas::testing
