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

#include "speechnas/graph.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>

#include "speechnas/errors.hpp"

namespace speechnas {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;
using MutVecMap = Eigen::Map<Eigen::RowVectorXd>;

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

void Parameter::mark_touched(const Shape& extents) {
  if (touched.empty()) {
    touched = extents;
    return;
  }
  for (std::size_t i = 0; i < touched.size(); ++i) touched[i] = std::max(touched[i], extents[i]);
}

Parameter& ParamStore::add(std::string name, NdArray init, bool trainable) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
  Parameter p;
  p.name = name;
  p.grad = NdArray(init.shape(), DType::F64);
  p.velocity = NdArray(init.shape(), DType::F64);
  p.value = std::move(init);
  p.trainable = trainable;
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter* ParamStore::find(std::string_view name) noexcept {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParamStore::find(std::string_view name) const noexcept {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter& ParamStore::get(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw ConfigError("unknown parameter: " + std::string(name));
}

const Parameter& ParamStore::get(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw ConfigError("unknown parameter: " + std::string(name));
}

std::size_t ParamStore::trainable_scalars() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.value.size();
  }
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) {
    p.grad.fill(0.0);
    p.touched.clear();
  }
}

void sgd_update(NdArray& param, const NdArray& grad, NdArray& velocity, const SgdOptions& opts) {
  if (param.shape() != grad.shape() || param.shape() != velocity.shape()) {
    throw ShapeError("sgd_update: param " + to_string(param.shape()) + ", grad " +
                     to_string(grad.shape()) + ", velocity " + to_string(velocity.shape()));
  }
  if (!(opts.lr > 0.0)) throw ConfigError("sgd: learning rate must be positive");
  if (opts.momentum < 0.0 || opts.momentum >= 1.0) throw ConfigError("sgd: momentum must be in [0,1)");
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + opts.weight_decay * param[i];
    velocity[i] = opts.momentum * velocity[i] + g;
    param[i] -= opts.lr * velocity[i];
  }
  param.round_to_dtype();
}

void sgd_step(ParamStore& params, const SgdOptions& opts) {
  for (auto& p : params) {
    if (!p.trainable || !p.is_touched()) {
      p.touched.clear();
      continue;
    }
    if (p.touched == p.value.shape()) {
      sgd_update(p.value, p.grad, p.velocity, opts);
      p.grad.fill(0.0);
    } else {
      NdArray value = leading_slice(p.value, p.touched);
      NdArray grad = leading_slice(p.grad, p.touched);
      NdArray velocity = leading_slice(p.velocity, p.touched);
      sgd_update(value, grad, velocity, opts);
      assign_leading(p.value, value);
      assign_leading(p.velocity, velocity);
      NdArray zeros(p.touched, DType::F64);
      assign_leading(p.grad, zeros);
    }
    p.touched.clear();
  }
}

// ---------------------------------------------------------------------------
// Graph

const Graph::Node& Graph::node(NodeId id) const {
  if (id.index >= nodes_.size()) throw ShapeError("invalid node id");
  return nodes_[id.index];
}

Graph::Node& Graph::node(NodeId id) {
  if (id.index >= nodes_.size()) throw ShapeError("invalid node id");
  return nodes_[id.index];
}

const NdArray& Graph::value(NodeId id) const { return node(id).value; }
const std::string& Graph::op_name(NodeId id) const { return node(id).op; }
bool Graph::requires_grad(NodeId id) const { return node(id).requires_grad; }
const std::vector<NodeId>& Graph::inputs(NodeId id) const { return node(id).inputs; }

NdArray Graph::grad(NodeId id) const {
  const Node& n = node(id);
  if (n.grad.shape() == n.value.shape() && !n.value.empty() && n.grad.size() == n.value.size()) {
    return n.grad;
  }
  return NdArray(n.value.shape(), DType::F64);
}

NdArray& Graph::grad_accumulator(NodeId id) {
  Node& n = node(id);
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
    n.grad = NdArray(n.value.shape(), DType::F64);
  }
  return n.grad;
}

NodeId Graph::push(std::string op, std::vector<NodeId> inputs, NdArray value, BackwardFn backward) {
  const NodeId id{nodes_.size()};
  for (NodeId in : inputs) {
    if (in.index >= nodes_.size()) throw ShapeError(op + ": input refers to a later or missing node");
  }
  if (value.dtype() != dtype_) value = value.as(dtype_);
  else value.round_to_dtype();
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by " + op + " at node " + std::to_string(id.index));
  }
  bool needs = false;
  for (NodeId in : inputs) needs = needs || nodes_[in.index].requires_grad;
  Node n;
  n.op = std::move(op);
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.requires_grad = needs && static_cast<bool>(backward);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return id;
}

NodeId Graph::constant(NdArray value) { return push("constant", {}, std::move(value), nullptr); }

NodeId Graph::param(Parameter& p) { return param_slice(p, p.value.shape()); }

NodeId Graph::param_slice(Parameter& p, Shape extents) {
  NdArray v = extents == p.value.shape() ? p.value : leading_slice(p.value, extents);
  p.mark_touched(extents);
  const NodeId id{nodes_.size()};
  Parameter* target = &p;
  const bool full = extents == p.value.shape();
  Node n;
  n.op = "param:" + p.name;
  n.value = v.as(dtype_);
  if (!n.value.all_finite()) throw NumericError("non-finite parameter " + p.name);
  n.requires_grad = true;
  n.backward = [target, full](Graph& g, NodeId self) {
    const NdArray& gy = g.grad_accumulator(self);
    if (full) {
      for (std::size_t i = 0; i < gy.size(); ++i) target->grad[i] += gy[i];
    } else {
      add_into_leading(target->grad, gy);
    }
  };
  nodes_.push_back(std::move(n));
  return id;
}

void Graph::backward(NodeId loss) {
  Node& root = node(loss);
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(root.value.shape()));
  }
  for (auto& n : nodes_) n.grad = NdArray();
  grad_accumulator(loss)[0] = 1.0;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() != n.value.size() || n.grad.empty()) continue;
    if (!n.grad.all_finite()) {
      throw NumericError("non-finite gradient at node " + std::to_string(i) + " (" + n.op + ")");
    }
    n.backward(*this, NodeId{i});
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops

NodeId add(Graph& g, NodeId a, NodeId b) {
  require_same_shape(g.shape(a), g.shape(b), "add");
  NdArray y = g.value(a);
  const NdArray& vb = g.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += vb[i];
  return g.push("add", {a, b}, std::move(y), [a, b](Graph& gr, NodeId self) {
    const NdArray gy = gr.grad_accumulator(self);
    for (NodeId in : {a, b}) {
      if (!gr.requires_grad(in)) continue;
      NdArray& gi = gr.grad_accumulator(in);
      for (std::size_t i = 0; i < gy.size(); ++i) gi[i] += gy[i];
    }
  });
}

NodeId mul(Graph& g, NodeId a, NodeId b) {
  require_same_shape(g.shape(a), g.shape(b), "mul");
  NdArray y = g.value(a);
  const NdArray& vb = g.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= vb[i];
  return g.push("mul", {a, b}, std::move(y), [a, b](Graph& gr, NodeId self) {
    const NdArray gy = gr.grad_accumulator(self);
    const NdArray& va = gr.value(a);
    const NdArray& vb = gr.value(b);
    if (gr.requires_grad(a)) {
      NdArray& ga = gr.grad_accumulator(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * vb[i];
    }
    if (gr.requires_grad(b)) {
      NdArray& gb = gr.grad_accumulator(b);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * va[i];
    }
  });
}

NodeId scale(Graph& g, NodeId x, double factor) {
  NdArray y = g.value(x);
  for (double& v : y.data()) v *= factor;
  return g.push("scale", {x}, std::move(y), [x, factor](Graph& gr, NodeId self) {
    const NdArray& gy = gr.grad_accumulator(self);
    NdArray& gx = gr.grad_accumulator(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += factor * gy[i];
  });
}

NodeId sum(Graph& g, NodeId x) {
  const NdArray& vx = g.value(x);
  double s = 0.0;
  for (double v : vx.data()) s += v;
  return g.push("sum", {x}, NdArray::scalar(s, g.dtype()), [x](Graph& gr, NodeId self) {
    const double gy = gr.grad_accumulator(self)[0];
    NdArray& gx = gr.grad_accumulator(x);
    for (double& v : gx.data()) v += gy;
  });
}

NodeId mean(Graph& g, NodeId x) {
  const std::size_t n = g.value(x).size();
  if (n == 0) throw ShapeError("mean of empty array");
  return scale(g, sum(g, x), 1.0 / static_cast<double>(n));
}

NodeId relu(Graph& g, NodeId x) {
  NdArray y = g.value(x);
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return g.push("relu", {x}, std::move(y), [x](Graph& gr, NodeId self) {
    const NdArray& gy = gr.grad_accumulator(self);
    const NdArray& vx = gr.value(x);
    NdArray& gx = gr.grad_accumulator(x);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (vx[i] > 0.0) gx[i] += gy[i];
    }
  });
}

NodeId softmax(Graph& g, NodeId x, std::size_t axis) {
  const NdArray& vx = g.value(x);
  const AxisSplit s = split_at(vx.shape(), axis);
  NdArray y(vx.shape(), g.dtype());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, vx[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(vx[base + k * s.inner] - mx);
        y[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) y[base + k * s.inner] /= z;
    }
  }
  return g.push("softmax", {x}, std::move(y), [x, s](Graph& gr, NodeId self) {
    const NdArray& gy = gr.grad_accumulator(self);
    const NdArray& vy = gr.value(self);
    NdArray& gx = gr.grad_accumulator(x);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) dot += gy[base + k * s.inner] * vy[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t i = base + k * s.inner;
          gx[i] += vy[i] * (gy[i] - dot);
        }
      }
    }
  });
}

NodeId concat(Graph& g, std::span<const NodeId> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: empty input list");
  const Shape& first = g.shape(xs[0]);
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (NodeId x : xs) {
    const Shape& sh = g.shape(x);
    if (sh.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < sh.size(); ++i) {
      if (i != axis && sh[i] != first[i]) {
        throw ShapeError("concat: shape mismatch " + to_string(sh) + " vs " + to_string(first));
      }
    }
    extents.push_back(sh[axis]);
    out_shape[axis] += sh[axis];
  }
  const AxisSplit so = split_at(out_shape, axis);
  NdArray y(out_shape, g.dtype());
  std::size_t offset = 0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const NdArray& vx = g.value(xs[j]);
    const std::size_t run = extents[j] * so.inner;
    for (std::size_t o = 0; o < so.outer; ++o) {
      std::copy_n(vx.raw() + o * run, run, y.raw() + o * so.extent * so.inner + offset * so.inner);
    }
    offset += extents[j];
  }
  std::vector<NodeId> inputs(xs.begin(), xs.end());
  return g.push("concat", inputs, std::move(y), [inputs, extents, so](Graph& gr, NodeId self) {
    const NdArray& gy = gr.grad_accumulator(self);
    std::size_t off = 0;
    for (std::size_t j = 0; j < inputs.size(); ++j) {
      const std::size_t run = extents[j] * so.inner;
      if (gr.requires_grad(inputs[j])) {
        NdArray& gx = gr.grad_accumulator(inputs[j]);
        for (std::size_t o = 0; o < so.outer; ++o) {
          const double* src = gy.raw() + o * so.extent * so.inner + off * so.inner;
          double* dst = gx.raw() + o * run;
          for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
        }
      }
      off += extents[j];
    }
  });
}

NodeId slice(Graph& g, NodeId x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& sh = g.shape(x);
  const AxisSplit s = split_at(sh, axis);
  if (begin > end || end > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for axis extent " + std::to_string(s.extent));
  }
  Shape out_shape = sh;
  out_shape[axis] = end - begin;
  NdArray y(out_shape, g.dtype());
  const NdArray& vx = g.value(x);
  const std::size_t run = (end - begin) * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(vx.raw() + o * s.extent * s.inner + begin * s.inner, run, y.raw() + o * run);
  }
  return g.push("slice", {x}, std::move(y), [x, s, begin, run](Graph& gr, NodeId self) {
    const NdArray& gy = gr.grad_accumulator(self);
    NdArray& gx = gr.grad_accumulator(x);
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = gx.raw() + o * s.extent * s.inner + begin * s.inner;
      const double* src = gy.raw() + o * run;
      for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
    }
  });
}

NodeId reshape(Graph& g, NodeId x, Shape shape) {
  NdArray y = g.value(x).reshaped(std::move(shape));
  return g.push("reshape", {x}, std::move(y), [x](Graph& gr, NodeId self) {
    const NdArray& gy = gr.grad_accumulator(self);
    NdArray& gx = gr.grad_accumulator(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

// ---------------------------------------------------------------------------
// Linear ops

NodeId affine(Graph& g, NodeId x, NodeId weight, std::optional<NodeId> bias) {
  const Shape& sx = g.shape(x);
  const Shape& sw = g.shape(weight);
  if (sx.empty() || sw.size() != 2 || sx.back() != sw[0]) {
    throw ShapeError("affine: x " + to_string(sx) + " incompatible with W " + to_string(sw));
  }
  const std::size_t din = sw[0];
  const std::size_t dout = sw[1];
  if (bias && g.shape(*bias) != Shape{dout}) {
    throw ShapeError("affine: bias " + to_string(g.shape(*bias)) + " expected [" + std::to_string(dout) + "]");
  }
  const std::size_t rows = numel(sx) / din;
  Shape out_shape = sx;
  out_shape.back() = dout;
  NdArray y(out_shape, g.dtype());
  {
    ConstMap X(g.value(x).raw(), rows, din);
    ConstMap W(g.value(weight).raw(), din, dout);
    MutMap Y(y.raw(), rows, dout);
    Y.noalias() = X * W;
    if (bias) Y.rowwise() += ConstVecMap(g.value(*bias).raw(), dout);
  }
  std::vector<NodeId> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return g.push("affine", inputs, std::move(y), [x, weight, bias, rows, din, dout](Graph& gr, NodeId self) {
    ConstMap GY(gr.grad_accumulator(self).raw(), rows, dout);
    if (gr.requires_grad(x)) {
      MutMap GX(gr.grad_accumulator(x).raw(), rows, din);
      GX.noalias() += GY * ConstMap(gr.value(weight).raw(), din, dout).transpose();
    }
    if (gr.requires_grad(weight)) {
      MutMap GW(gr.grad_accumulator(weight).raw(), din, dout);
      GW.noalias() += ConstMap(gr.value(x).raw(), rows, din).transpose() * GY;
    }
    if (bias && gr.requires_grad(*bias)) {
      MutVecMap GB(gr.grad_accumulator(*bias).raw(), dout);
      GB += GY.colwise().sum();
    }
  });
}

NodeId conv1d(Graph& g, NodeId x, NodeId weight, NodeId bias, std::size_t dilation) {
  const Shape& sx = g.shape(x);
  const Shape& sw = g.shape(weight);
  if (dilation == 0) throw ShapeError("conv1d: dilation must be positive");
  if (sx.size() != 2 && sx.size() != 3) throw ShapeError("conv1d: x must be [T,C] or [B,T,C], got " + to_string(sx));
  if (sw.size() != 3) throw ShapeError("conv1d: weight must be [K,Cin,Cout], got " + to_string(sw));
  const std::size_t batch = sx.size() == 3 ? sx[0] : 1;
  const std::size_t frames = sx[sx.size() - 2];
  const std::size_t cin = sx.back();
  const std::size_t taps = sw[0];
  const std::size_t cout = sw[2];
  if (taps % 2 == 0) throw ShapeError("conv1d: kernel size must be odd");
  if (sw[1] != cin) throw ShapeError("conv1d: x " + to_string(sx) + " incompatible with weight " + to_string(sw));
  if (frames < 1) throw ShapeError("conv1d: need at least one frame");
  if (g.shape(bias) != Shape{cout}) throw ShapeError("conv1d: bias shape " + to_string(g.shape(bias)));

  Shape out_shape = sx;
  out_shape.back() = cout;
  NdArray y(out_shape, g.dtype());
  const long half = static_cast<long>(taps / 2);
  const long T = static_cast<long>(frames);
  auto tap_range = [=](std::size_t k) {
    const long off = (static_cast<long>(k) - half) * static_cast<long>(dilation);
    const long start = std::max(0L, -off);
    const long stop = std::min(T, T - off);
    return std::tuple<long, long, long>{off, start, std::max(0L, stop - start)};
  };
  {
    const double* xv = g.value(x).raw();
    const double* wv = g.value(weight).raw();
    ConstVecMap B(g.value(bias).raw(), cout);
    for (std::size_t b = 0; b < batch; ++b) {
      ConstMap X(xv + b * frames * cin, frames, cin);
      MutMap Y(y.raw() + b * frames * cout, frames, cout);
      Y.rowwise() = B;
      for (std::size_t k = 0; k < taps; ++k) {
        auto [off, start, len] = tap_range(k);
        if (len <= 0) continue;
        ConstMap Wk(wv + k * cin * cout, cin, cout);
        Y.middleRows(start, len).noalias() += X.middleRows(start + off, len) * Wk;
      }
    }
  }
  return g.push("conv1d", {x, weight, bias}, std::move(y),
                [=](Graph& gr, NodeId self) {
                  const double* gyv = gr.grad_accumulator(self).raw();
                  const bool need_x = gr.requires_grad(x);
                  const bool need_w = gr.requires_grad(weight);
                  const double* xv = gr.value(x).raw();
                  const double* wv = gr.value(weight).raw();
                  double* gxv = need_x ? gr.grad_accumulator(x).raw() : nullptr;
                  double* gwv = need_w ? gr.grad_accumulator(weight).raw() : nullptr;
                  for (std::size_t b = 0; b < batch; ++b) {
                    ConstMap GY(gyv + b * frames * cout, frames, cout);
                    for (std::size_t k = 0; k < taps; ++k) {
                      auto [off, start, len] = tap_range(k);
                      if (len <= 0) continue;
                      if (need_x) {
                        MutMap GX(gxv + b * frames * cin, frames, cin);
                        GX.middleRows(start + off, len).noalias() +=
                            GY.middleRows(start, len) * ConstMap(wv + k * cin * cout, cin, cout).transpose();
                      }
                      if (need_w) {
                        MutMap GW(gwv + k * cin * cout, cin, cout);
                        GW.noalias() +=
                            ConstMap(xv + b * frames * cin, frames, cin).middleRows(start + off, len).transpose() *
                            GY.middleRows(start, len);
                      }
                    }
                  }
                  if (gr.requires_grad(bias)) {
                    MutVecMap GB(gr.grad_accumulator(bias).raw(), cout);
                    GB += ConstMap(gyv, batch * frames, cout).colwise().sum();
                  }
                });
}

NodeId scale_channels(Graph& g, NodeId h, NodeId u) {
  const Shape& sh = g.shape(h);
  const Shape& su = g.shape(u);
  if (sh.size() != 3 || su.size() != 2 || su[0] != sh[0] || su[1] != sh[2]) {
    throw ShapeError("scale_channels: h " + to_string(sh) + " incompatible with u " + to_string(su));
  }
  const std::size_t B = sh[0], T = sh[1], C = sh[2];
  NdArray y = g.value(h);
  const NdArray& vu = g.value(u);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      double* row = y.raw() + (b * T + t) * C;
      for (std::size_t c = 0; c < C; ++c) row[c] *= vu[b * C + c];
    }
  }
  return g.push("scale_channels", {h, u}, std::move(y), [h, u, B, T, C](Graph& gr, NodeId self) {
    const NdArray& gy = gr.grad_accumulator(self);
    const NdArray& vh = gr.value(h);
    const NdArray& vu = gr.value(u);
    if (gr.requires_grad(h)) {
      NdArray& gh = gr.grad_accumulator(h);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = (b * T + t) * C + c;
            gh[i] += gy[i] * vu[b * C + c];
          }
    }
    if (gr.requires_grad(u)) {
      NdArray& gu = gr.grad_accumulator(u);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = (b * T + t) * C + c;
            gu[b * C + c] += gy[i] * vh[i];
          }
    }
  });
}

NodeId l2_normalize(Graph& g, NodeId x, std::size_t axis, double eps) {
  const Shape& sx = g.shape(x);
  if (sx.size() != 2 || axis > 1) throw ShapeError("l2_normalize: expects rank-2 input and axis 0 or 1");
  // axis 1 normalises rows, axis 0 normalises columns.
  const std::size_t rows = sx[0], cols = sx[1];
  const std::size_t count = axis == 1 ? rows : cols;
  const std::size_t len = axis == 1 ? cols : rows;
  auto index = [=](std::size_t v, std::size_t k) { return axis == 1 ? v * cols + k : k * cols + v; };
  NdArray y(sx, g.dtype());
  auto norms = std::make_shared<std::vector<double>>(count);
  const NdArray& vx = g.value(x);
  for (std::size_t v = 0; v < count; ++v) {
    double ss = 0.0;
    for (std::size_t k = 0; k < len; ++k) ss += vx[index(v, k)] * vx[index(v, k)];
    const double n = std::sqrt(ss);
    (*norms)[v] = n;
    const double d = std::max(n, eps);
    for (std::size_t k = 0; k < len; ++k) y[index(v, k)] = vx[index(v, k)] / d;
  }
  return g.push("l2_normalize", {x}, std::move(y), [x, norms, count, len, eps, index](Graph& gr, NodeId self) {
    const NdArray& gy = gr.grad_accumulator(self);
    const NdArray& vx = gr.value(x);
    NdArray& gx = gr.grad_accumulator(x);
    for (std::size_t v = 0; v < count; ++v) {
      const double n = (*norms)[v];
      if (n > eps) {
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += vx[index(v, k)] / n * gy[index(v, k)];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t i = index(v, k);
          gx[i] += (gy[i] - vx[i] / n * dot) / n;
        }
      } else {
        for (std::size_t k = 0; k < len; ++k) gx[index(v, k)] += gy[index(v, k)] / eps;
      }
    }
  });
}

namespace {

NodeId batch_norm_apply(Graph& g, NodeId x, NodeId gamma, NodeId beta, const std::vector<double>& mu,
                        const std::vector<double>& var, double eps, bool train, std::vector<NodeId> inputs) {
  const Shape& sx = g.shape(x);
  const std::size_t C = sx.back();
  const std::size_t R = numel(sx) / C;
  auto inv = std::make_shared<std::vector<double>>(C);
  for (std::size_t c = 0; c < C; ++c) (*inv)[c] = 1.0 / std::sqrt(var[c] + eps);
  auto xhat = std::make_shared<NdArray>(sx, DType::F64);
  NdArray y(sx, g.dtype());
  const NdArray& vx = g.value(x);
  const NdArray& vg = g.value(gamma);
  const NdArray& vb = g.value(beta);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = r * C + c;
      (*xhat)[i] = (vx[i] - mu[c]) * (*inv)[c];
      y[i] = vg[c] * (*xhat)[i] + vb[c];
    }
  return g.push(train ? "batch_norm_train" : "batch_norm_eval", std::move(inputs), std::move(y),
                [x, gamma, beta, inv, xhat, R, C, train](Graph& gr, NodeId self) {
                  const NdArray& gy = gr.grad_accumulator(self);
                  const NdArray& vg = gr.value(gamma);
                  std::vector<double> sum_gy(C, 0.0), sum_gy_xhat(C, 0.0);
                  for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < C; ++c) {
                      const std::size_t i = r * C + c;
                      sum_gy[c] += gy[i];
                      sum_gy_xhat[c] += gy[i] * (*xhat)[i];
                    }
                  if (gr.requires_grad(gamma)) {
                    NdArray& gg = gr.grad_accumulator(gamma);
                    for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gy_xhat[c];
                  }
                  if (gr.requires_grad(beta)) {
                    NdArray& gb = gr.grad_accumulator(beta);
                    for (std::size_t c = 0; c < C; ++c) gb[c] += sum_gy[c];
                  }
                  if (!gr.requires_grad(x)) return;
                  NdArray& gx = gr.grad_accumulator(x);
                  const double n = static_cast<double>(R);
                  for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < C; ++c) {
                      const std::size_t i = r * C + c;
                      const double scale_c = vg[c] * (*inv)[c];
                      if (train) {
                        gx[i] += scale_c * (gy[i] - sum_gy[c] / n - (*xhat)[i] * sum_gy_xhat[c] / n);
                      } else {
                        gx[i] += scale_c * gy[i];
                      }
                    }
                });
}

void check_bn_shapes(const Graph& g, NodeId x, NodeId gamma, NodeId beta) {
  const Shape& sx = g.shape(x);
  if (sx.empty()) throw ShapeError("batch_norm: scalar input");
  const std::size_t C = sx.back();
  if (g.shape(gamma) != Shape{C} || g.shape(beta) != Shape{C}) {
    throw ShapeError("batch_norm: gamma/beta must be [" + std::to_string(C) + "], input " + to_string(sx));
  }
  if (numel(sx) == 0) throw ShapeError("batch_norm: empty batch");
}

}  // namespace

NodeId batch_norm_train(Graph& g, NodeId x, NodeId gamma, NodeId beta, RunningStats stats, double momentum,
                        double eps) {
  check_bn_shapes(g, x, gamma, beta);
  const Shape& sx = g.shape(x);
  const std::size_t C = sx.back();
  const std::size_t R = numel(sx) / C;
  if ((stats.mean == nullptr) != (stats.var == nullptr)) throw ShapeError("batch_norm: incomplete running stats");
  if (stats.mean && (stats.mean->value.size() < C || stats.var->value.size() < C)) {
    throw ShapeError("batch_norm: running statistics narrower than " + std::to_string(C) + " channels");
  }
  const NdArray& vx = g.value(x);
  std::vector<double> mu(C, 0.0), var(C, 0.0);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) mu[c] += vx[r * C + c];
  for (double& m : mu) m /= static_cast<double>(R);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const double d = vx[r * C + c] - mu[c];
      var[c] += d * d;
    }
  for (double& v : var) v /= static_cast<double>(R);
  if (stats.mean) {
    const double unbias = R > 1 ? static_cast<double>(R) / static_cast<double>(R - 1) : 1.0;
    for (std::size_t c = 0; c < C; ++c) {
      stats.mean->value[c] = (1.0 - momentum) * stats.mean->value[c] + momentum * mu[c];
      stats.var->value[c] = (1.0 - momentum) * stats.var->value[c] + momentum * var[c] * unbias;
    }
    stats.mean->value.round_to_dtype();
    stats.var->value.round_to_dtype();
    stats.mean->mark_touched({C});
    stats.var->mark_touched({C});
  }
  return batch_norm_apply(g, x, gamma, beta, mu, var, eps, true, {x, gamma, beta});
}

NodeId batch_norm_eval(Graph& g, NodeId x, NodeId gamma, NodeId beta, NodeId mean, NodeId var, double eps) {
  check_bn_shapes(g, x, gamma, beta);
  const std::size_t C = g.shape(x).back();
  if (g.shape(mean) != Shape{C} || g.shape(var) != Shape{C}) {
    throw ShapeError("batch_norm: running statistics must be [" + std::to_string(C) + "]");
  }
  const NdArray& vm = g.value(mean);
  const NdArray& vv = g.value(var);
  std::vector<double> mu(vm.data().begin(), vm.data().end());
  std::vector<double> sig(vv.data().begin(), vv.data().end());
  return batch_norm_apply(g, x, gamma, beta, mu, sig, eps, false, {x, gamma, beta});
}

}  // namespace speechnas
