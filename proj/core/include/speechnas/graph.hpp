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
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "speechnas/tensor.hpp"

namespace speechnas {

/// Handle to a node of a Graph.
struct NodeId {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t index = npos;

  constexpr bool valid() const noexcept { return index != npos; }
  friend constexpr bool operator==(NodeId, NodeId) = default;
};

/// A named tensor with a gradient slot and an SGD velocity buffer.
///
/// `touched` holds the leading extents read by graphs since the last optimizer
/// step. Weight-sharing paths only read leading slices, so the optimizer only
/// updates that box and leaves the rest of the tensor bit-identical.
struct Parameter {
  std::string name;
  NdArray value;
  NdArray grad;
  NdArray velocity;
  bool trainable = true;
  Shape touched;

  void mark_touched(const Shape& extents);
  bool is_touched() const noexcept { return !touched.empty(); }
};

/// Ordered registry of named parameters and non-trainable buffers.
/// Element addresses are stable under insertion; copying deep-copies values.
class ParamStore {
 public:
  Parameter& add(std::string name, NdArray init, bool trainable = true);

  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  Parameter* find(std::string_view name) noexcept;
  const Parameter* find(std::string_view name) const noexcept;
  bool contains(std::string_view name) const noexcept { return find(name) != nullptr; }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  std::size_t trainable_scalars() const noexcept;
  void zero_grad();

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.95;
  double weight_decay = 5e-4;
};

/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
void sgd_update(NdArray& param, const NdArray& grad, NdArray& velocity, const SgdOptions& opts);

/// Applies sgd_update to the touched leading box of every trainable parameter,
/// then clears gradients and touch marks. Untouched parameters are skipped.
void sgd_step(ParamStore& params, const SgdOptions& opts);

enum class Mode { Train, Eval };

/// Tape of operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so inputs always precede their
/// consumers. A Graph is single-owner; separate graphs may run concurrently
/// over shared read-only parameters as long as nothing calls backward() on
/// shared Parameters at the same time.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  explicit Graph(DType dtype = DType::F32) : dtype_(dtype) {}

  DType dtype() const noexcept { return dtype_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  NodeId constant(NdArray value);
  NodeId param(Parameter& p);
  /// Leaf reading the leading block `extents` of p; backward scatters into
  /// the same block of p.grad only.
  NodeId param_slice(Parameter& p, Shape extents);

  const NdArray& value(NodeId id) const;
  const Shape& shape(NodeId id) const { return value(id).shape(); }
  /// Gradient of the last backward() with respect to this node (zeros if unreached).
  NdArray grad(NodeId id) const;
  const std::string& op_name(NodeId id) const;
  bool requires_grad(NodeId id) const;

  /// Populates gradients of every parameter reachable from a scalar loss.
  void backward(NodeId loss);

  /// Appends an op node. The value is rounded to the graph dtype and checked
  /// for NaN/Inf; backward may be empty for non-differentiable outputs.
  NodeId push(std::string op, std::vector<NodeId> inputs, NdArray value, BackwardFn backward);

  /// Gradient accumulator of a node, zero-initialised on first use.
  NdArray& grad_accumulator(NodeId id);
  const std::vector<NodeId>& inputs(NodeId id) const;

 private:
  struct Node {
    std::string op;
    std::vector<NodeId> inputs;
    NdArray value;
    NdArray grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  const Node& node(NodeId id) const;
  Node& node(NodeId id);

  DType dtype_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operators. Every operator validates shapes and throws ShapeError.

NodeId add(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId scale(Graph& g, NodeId x, double factor);
NodeId sum(Graph& g, NodeId x);
NodeId mean(Graph& g, NodeId x);
NodeId relu(Graph& g, NodeId x);
NodeId softmax(Graph& g, NodeId x, std::size_t axis);
NodeId concat(Graph& g, std::span<const NodeId> xs, std::size_t axis);
NodeId slice(Graph& g, NodeId x, std::size_t axis, std::size_t begin, std::size_t end);
NodeId reshape(Graph& g, NodeId x, Shape shape);

/// y = x W (+ b) over the trailing dimension of x.
NodeId affine(Graph& g, NodeId x, NodeId weight, std::optional<NodeId> bias);

/// Same-length dilated convolution over frames.
/// x: [T, Cin] or [B, T, Cin]; weight: [K, Cin, Cout] with K odd; bias: [Cout].
NodeId conv1d(Graph& g, NodeId x, NodeId weight, NodeId bias, std::size_t dilation);

/// Multiplies h[B, T, C] by per-utterance channel gains u[B, C] (broadcast over frames).
NodeId scale_channels(Graph& g, NodeId h, NodeId u);

/// L2-normalises slices along `axis` of a rank-2 array; norms are floored at eps.
NodeId l2_normalize(Graph& g, NodeId x, std::size_t axis, double eps = 1e-8);

/// Running statistics of a batch-norm layer; the leading C entries are used.
struct RunningStats {
  Parameter* mean = nullptr;
  Parameter* var = nullptr;
};

/// Normalises with batch statistics over all leading dimensions per trailing
/// channel. If `stats` is set, updates its leading C entries with
/// running = (1 - momentum) * running + momentum * batch (unbiased variance).
NodeId batch_norm_train(Graph& g, NodeId x, NodeId gamma, NodeId beta, RunningStats stats,
                        double momentum = 0.1, double eps = 1e-5);

/// Normalises with fixed statistics `mean`/`var` ([C] nodes, not differentiated).
NodeId batch_norm_eval(Graph& g, NodeId x, NodeId gamma, NodeId beta, NodeId mean, NodeId var,
                       double eps = 1e-5);

}  // namespace speechnas
