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

#include "speechnas/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "speechnas/errors.hpp"

namespace speechnas {

namespace {

void check_labels(std::span<const int> labels, std::size_t n, std::size_t classes, const char* op) {
  if (labels.size() != n) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ConfigError(std::string(op) + ": label " + std::to_string(y) + " out of range [0," +
                        std::to_string(classes) + ")");
    }
  }
}

}  // namespace

NodeId cross_entropy(Graph& g, NodeId logits, std::span<const int> labels) {
  const Shape& s = g.shape(logits);
  if (s.size() != 2) throw ShapeError("cross_entropy: logits must be [N,C], got " + to_string(s));
  const std::size_t N = s[0], C = s[1];
  if (N == 0) throw ShapeError("cross_entropy: empty batch");
  check_labels(labels, N, C, "cross_entropy");
  const NdArray& z = g.value(logits);
  auto probs = std::make_shared<std::vector<double>>(N * C);
  double loss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double* row = z.raw() + i * C;
    const double mx = *std::max_element(row, row + C);
    double se = 0.0;
    for (std::size_t j = 0; j < C; ++j) se += std::exp(row[j] - mx);
    const double lse = mx + std::log(se);
    loss += lse - row[labels[i]];
    for (std::size_t j = 0; j < C; ++j) (*probs)[i * C + j] = std::exp(row[j] - lse);
  }
  loss /= static_cast<double>(N);
  std::vector<int> ys(labels.begin(), labels.end());
  return g.push("cross_entropy", {logits}, NdArray::scalar(loss, g.dtype()),
                [logits, probs, ys, N, C](Graph& gr, NodeId self) {
                  const double gy = gr.grad_accumulator(self)[0] / static_cast<double>(N);
                  NdArray& gz = gr.grad_accumulator(logits);
                  for (std::size_t i = 0; i < N; ++i) {
                    for (std::size_t j = 0; j < C; ++j) {
                      const double target = static_cast<int>(j) == ys[i] ? 1.0 : 0.0;
                      gz[i * C + j] += gy * ((*probs)[i * C + j] - target);
                    }
                  }
                });
}

NodeId additive_margin_logits(Graph& g, NodeId cosines, std::span<const int> labels, double scale, double margin) {
  const Shape& s = g.shape(cosines);
  if (s.size() != 2) throw ShapeError("aam: cosines must be [N,C]");
  if (!(scale > 0.0)) throw ConfigError("aam: scale must be positive");
  if (margin < 0.0 || margin >= M_PI / 2.0) throw ConfigError("aam: margin must be in [0, pi/2)");
  const std::size_t N = s[0], C = s[1];
  check_labels(labels, N, C, "aam");
  const double cm = std::cos(margin), sm = std::sin(margin);
  const NdArray& cv = g.value(cosines);
  NdArray y(s, g.dtype());
  // d(logit)/d(cos) per element; zero where clamping is active.
  auto slope = std::make_shared<std::vector<double>>(N * C, scale);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < C; ++j) {
      const std::size_t k = i * C + j;
      const double raw = cv[k];
      const double c = std::clamp(raw, -1.0, 1.0);
      const bool clamped = raw != c;
      if (static_cast<int>(j) == labels[i] && c <= -cm) {
        // theta + m past pi: linear continuation keeps the logit monotone in m.
        y[k] = scale * (c - margin * sm);
        (*slope)[k] = clamped ? 0.0 : scale;
      } else if (static_cast<int>(j) == labels[i]) {
        const double sin_t = std::sqrt(std::max(0.0, 1.0 - c * c));
        y[k] = scale * (c * cm - sin_t * sm);
        double d = cm;
        if (sin_t > 1e-12) d += c / sin_t * sm;
        (*slope)[k] = clamped ? 0.0 : scale * d;
      } else {
        y[k] = scale * c;
        (*slope)[k] = clamped ? 0.0 : scale;
      }
    }
  }
  return g.push("aam_logits", {cosines}, std::move(y), [cosines, slope](Graph& gr, NodeId self) {
    const NdArray& gy = gr.grad_accumulator(self);
    NdArray& gc = gr.grad_accumulator(cosines);
    for (std::size_t k = 0; k < gy.size(); ++k) gc[k] += gy[k] * (*slope)[k];
  });
}

NodeId hyperspherical_energy(Graph& g, NodeId normalized_weights, std::span<const int> labels, double lambda,
                             double distance_floor) {
  const Shape& s = g.shape(normalized_weights);
  if (s.size() != 2) throw ShapeError("mhe: weights must be [D,C]");
  const std::size_t D = s[0], C = s[1];
  if (C < 2) throw ConfigError("mhe: need at least two classes");
  const std::size_t N = labels.size();
  if (N == 0) throw ShapeError("mhe: empty batch");
  check_labels(labels, N, C, "mhe");
  const NdArray& w = g.value(normalized_weights);
  // Pairwise squared column distances.
  auto dist2 = std::make_shared<std::vector<double>>(C * C, 0.0);
  for (std::size_t a = 0; a < C; ++a)
    for (std::size_t b = a + 1; b < C; ++b) {
      double d = 0.0;
      for (std::size_t r = 0; r < D; ++r) {
        const double diff = w[r * C + a] - w[r * C + b];
        d += diff * diff;
      }
      (*dist2)[a * C + b] = (*dist2)[b * C + a] = d;
    }
  const double norm = lambda / (static_cast<double>(N) * static_cast<double>(C - 1));
  double energy = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    for (std::size_t j = 0; j < C; ++j) {
      if (j == y) continue;
      energy += 1.0 / std::max((*dist2)[y * C + j], distance_floor);
    }
  }
  energy *= norm;
  std::vector<int> ys(labels.begin(), labels.end());
  return g.push("mhe", {normalized_weights}, NdArray::scalar(energy, g.dtype()),
                [normalized_weights, dist2, ys, norm, distance_floor, D, C](Graph& gr, NodeId self) {
                  const double gy = gr.grad_accumulator(self)[0] * norm;
                  const NdArray& w = gr.value(normalized_weights);
                  NdArray& gw = gr.grad_accumulator(normalized_weights);
                  for (int yi : ys) {
                    const std::size_t y = static_cast<std::size_t>(yi);
                    for (std::size_t j = 0; j < C; ++j) {
                      if (j == y) continue;
                      const double d2 = (*dist2)[y * C + j];
                      if (d2 <= distance_floor) continue;
                      // d(1/d2)/d(w_y) = -2 (w_y - w_j) / d2^2
                      const double f = -2.0 * gy / (d2 * d2);
                      for (std::size_t r = 0; r < D; ++r) {
                        const double diff = w[r * C + y] - w[r * C + j];
                        gw[r * C + y] += f * diff;
                        gw[r * C + j] -= f * diff;
                      }
                    }
                  }
                });
}

NodeId aam_mhe(Graph& g, NodeId embeddings, NodeId weights, std::span<const int> labels, const AamMheOptions& opts) {
  const Shape& se = g.shape(embeddings);
  const Shape& sw = g.shape(weights);
  if (se.size() != 2 || sw.size() != 2 || se[1] != sw[0]) {
    throw ShapeError("aam_mhe: embeddings " + to_string(se) + " incompatible with weights " + to_string(sw));
  }
  if (sw[1] < 2) throw ConfigError("aam_mhe: need at least two classes");
  NodeId wn = l2_normalize(g, weights, 0, opts.norm_eps);
  NodeId en = l2_normalize(g, embeddings, 1, opts.norm_eps);
  NodeId cosines = affine(g, en, wn, std::nullopt);
  NodeId logits = additive_margin_logits(g, cosines, labels, opts.scale, opts.margin);
  NodeId loss = cross_entropy(g, logits, labels);
  if (opts.lambda != 0.0) loss = add(g, loss, hyperspherical_energy(g, wn, labels, opts.lambda, opts.distance_floor));
  return loss;
}

ClassifierWeights::ClassifierWeights(NdArray weights) : weights_(std::move(weights)) {
  if (weights_.rank() != 2) throw ShapeError("classifier weights must be [D,C]");
  if (weights_.dim(1) < 2) throw ConfigError("classifier needs at least two classes");
  const std::size_t D = weights_.dim(0), C = weights_.dim(1);
  norms_.assign(C, 0.0);
  for (std::size_t r = 0; r < D; ++r)
    for (std::size_t j = 0; j < C; ++j) norms_[j] += weights_[r * C + j] * weights_[r * C + j];
  for (double& n : norms_) n = std::sqrt(n);
}

NdArray ClassifierWeights::normalized(double eps) const {
  NdArray out = weights_.as(DType::F64);
  const std::size_t D = weights_.dim(0), C = weights_.dim(1);
  for (std::size_t r = 0; r < D; ++r)
    for (std::size_t j = 0; j < C; ++j) out[r * C + j] /= std::max(norms_[j], eps);
  return out;
}

double aam_mhe_value(const NdArray& embeddings, const ClassifierWeights& weights, std::span<const int> labels,
                     const AamMheOptions& opts) {
  Graph g(DType::F64);
  NodeId e = g.constant(embeddings.as(DType::F64));
  NodeId w = g.constant(weights.weights().as(DType::F64));
  return g.value(aam_mhe(g, e, w, labels, opts)).item();
}

double cross_entropy_value(const NdArray& logits, std::span<const int> labels) {
  Graph g(DType::F64);
  return g.value(cross_entropy(g, g.constant(logits.as(DType::F64)), labels)).item();
}

}  // namespace speechnas
