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

#include <cstddef>
#include <span>
#include <vector>

#include "speechnas/graph.hpp"

namespace speechnas {

/// Mean negative log-softmax of the true class. logits: [N, C]; labels in [0, C).
NodeId cross_entropy(Graph& g, NodeId logits, std::span<const int> labels);

struct AamMheOptions {
  double scale = 30.0;   // s
  double margin = 0.2;   // m, radians
  double lambda = 0.01;  // MHE strength
  double norm_eps = 1e-8;
  double distance_floor = 1e-12;
};

/// Scaled cosine logits with the additive angular margin on the true class:
/// s*cos(theta_y + m) for the label column, s*cos(theta_j) elsewhere.
/// cosines: [N, C], clamped to [-1, 1] before expansion.
NodeId additive_margin_logits(Graph& g, NodeId cosines, std::span<const int> labels, double scale, double margin);

/// lambda / (N (C-1)) * sum_i sum_{j != y_i} 1 / max(|w_yi - w_j|^2, floor)
/// over columns of already-normalised weights [D, C].
NodeId hyperspherical_energy(Graph& g, NodeId normalized_weights, std::span<const int> labels, double lambda,
                             double distance_floor = 1e-12);

/// AAM softmax plus MHE regulariser. embeddings: [N, D]; weights: [D, C].
/// Both are L2-normalised internally.
NodeId aam_mhe(Graph& g, NodeId embeddings, NodeId weights, std::span<const int> labels, const AamMheOptions& opts);

/// Class weight matrix with one column per speaker.
class ClassifierWeights {
 public:
  explicit ClassifierWeights(NdArray weights);

  const NdArray& weights() const noexcept { return weights_; }
  std::size_t embedding_dim() const noexcept { return weights_.dim(0); }
  std::size_t num_classes() const noexcept { return weights_.dim(1); }
  /// L2 norm of each column, computed once.
  const std::vector<double>& column_norms() const noexcept { return norms_; }
  /// Columns scaled to unit length (norm floored at eps).
  NdArray normalized(double eps = 1e-8) const;

 private:
  NdArray weights_;
  std::vector<double> norms_;
};

/// Evaluates aam_mhe on plain arrays (64-bit graph, no gradients kept).
double aam_mhe_value(const NdArray& embeddings, const ClassifierWeights& weights, std::span<const int> labels,
                     const AamMheOptions& opts);
double cross_entropy_value(const NdArray& logits, std::span<const int> labels);

}  // namespace speechnas
