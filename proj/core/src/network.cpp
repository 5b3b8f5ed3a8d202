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

#include "speechnas/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "speechnas/errors.hpp"

namespace speechnas {

std::string to_string(ClassifierKind kind) { return kind == ClassifierKind::Softmax ? "softmax" : "cosine"; }

ClassifierKind parse_classifier_kind(std::string_view text) {
  if (text == "softmax") return ClassifierKind::Softmax;
  if (text == "cosine") return ClassifierKind::Cosine;
  throw ConfigError("unknown classifier kind: " + std::string(text));
}

std::size_t NetConfig::bottleneck_width(int cdim) const {
  const double w = std::round(bottleneck_ratio * static_cast<double>(cdim));
  return static_cast<std::size_t>(std::max(1.0, w));
}

namespace {

std::string block_prefix(std::size_t layer) { return "block" + std::to_string(layer) + "."; }

NdArray he_normal(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  NdArray a(shape, DType::F32);
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(1, fan_in))));
  for (double& v : a.data()) v = n(rng);
  a.round_to_dtype();
  return a;
}

NdArray filled(const Shape& shape, double value) {
  NdArray a(shape, DType::F32);
  a.fill(value);
  return a;
}

void add_batch_norm(ParamStore& ps, const std::string& prefix, std::size_t channels) {
  ps.add(prefix + "gamma", filled({channels}, 1.0));
  ps.add(prefix + "beta", filled({channels}, 0.0));
  ps.add(prefix + "mean", filled({channels}, 0.0), false);
  ps.add(prefix + "var", filled({channels}, 1.0), false);
}

void add_classifier(ParamStore& ps, const NetConfig& cfg, ClassifierKind kind, std::mt19937_64& rng) {
  if (kind == ClassifierKind::Softmax) {
    ps.add("head.cls.w", he_normal({cfg.embedding_dim, cfg.num_speakers}, cfg.embedding_dim, rng));
    ps.add("head.cls.b", filled({cfg.num_speakers}, 0.0));
  } else {
    NdArray w({cfg.embedding_dim, cfg.num_speakers}, DType::F32);
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& v : w.data()) v = n(rng);
    w.round_to_dtype();
    ps.add("head.aam.w", std::move(w));
  }
}

}  // namespace

Network::Network(NetConfig config, std::vector<SlotChoice> capacity, std::uint64_t init_seed)
    : config_(std::move(config)), capacity_(std::move(capacity)) {
  if (capacity_.empty()) throw ConfigError("network needs at least one layer");
  if (config_.num_speakers < 2) throw ConfigError("network needs at least two speakers");
  if (config_.input_dim == 0 || config_.stem_channels == 0 || config_.embedding_dim == 0) {
    throw ConfigError("network dimensions must be positive");
  }
  if (config_.stem_kernel % 2 == 0 || config_.branch_kernel % 2 == 0) throw ConfigError("kernel sizes must be odd");
  for (const auto& c : capacity_) {
    if (c.branches < 1 || c.branches > kMaxBranches || c.cdim < 1 || c.sdim < 1) {
      throw ConfigError("invalid layer capacity");
    }
  }
  build(init_seed);
}

Network Network::supernet(const NetConfig& config, const SearchSpace& space, std::uint64_t init_seed) {
  space.check();
  std::vector<SlotChoice> cap(space.num_layers, SlotChoice{space.max_branches(), space.max_cdim(), space.max_sdim()});
  Network net(config, std::move(cap), init_seed);
  net.space_ = space;
  return net;
}

std::size_t Network::layer_input_capacity(std::size_t layer) const {
  std::size_t d = config_.stem_channels;
  for (std::size_t l = 0; l < layer; ++l) d += static_cast<std::size_t>(capacity_.at(l).cdim);
  return d;
}

std::size_t Network::output_capacity() const { return layer_input_capacity(capacity_.size()); }

void Network::build(std::uint64_t init_seed) {
  std::mt19937_64 rng(init_seed);
  const auto& cfg = config_;
  const std::size_t K0 = cfg.stem_kernel;
  params_.add("stem.w", he_normal({K0, cfg.input_dim, cfg.stem_channels}, K0 * cfg.input_dim, rng));
  params_.add("stem.b", filled({cfg.stem_channels}, 0.0));
  for (std::size_t l = 0; l < capacity_.size(); ++l) {
    const std::string p = block_prefix(l);
    const std::size_t din = layer_input_capacity(l);
    const std::size_t c = static_cast<std::size_t>(capacity_[l].cdim);
    const std::size_t d = static_cast<std::size_t>(capacity_[l].sdim);
    const std::size_t w = cfg.bottleneck_width(capacity_[l].cdim);
    const std::size_t K = cfg.branch_kernel;
    add_batch_norm(params_, p + "bn_in.", din);
    params_.add(p + "bottleneck.w", he_normal({din, w}, din, rng));
    params_.add(p + "bottleneck.b", filled({w}, 0.0));
    add_batch_norm(params_, p + "bn_mid.", w);
    for (int i = 0; i < capacity_[l].branches; ++i) {
      const std::string bp = p + "branch" + std::to_string(i) + ".";
      params_.add(bp + "w", he_normal({K, w, c}, K * w, rng));
      params_.add(bp + "b", filled({c}, 0.0));
    }
    params_.add(p + "select.w", he_normal({4, c, d}, 4 * c, rng));
    params_.add(p + "select.b", filled({d}, 0.0));
    for (int i = 0; i < capacity_[l].branches; ++i) {
      const std::string gp = p + "gate" + std::to_string(i) + ".";
      params_.add(gp + "w", he_normal({d, c}, d, rng));
      params_.add(gp + "b", filled({c}, 0.0));
    }
  }
  const std::size_t dout = output_capacity();
  add_batch_norm(params_, "head.bn.", dout);
  params_.add("head.embed.w", he_normal({4, dout, cfg.embedding_dim}, 4 * dout, rng));
  params_.add("head.embed.b", filled({cfg.embedding_dim}, 0.0));
  add_batch_norm(params_, "head.embed_bn.", cfg.embedding_dim);
  add_classifier(params_, cfg, cfg.classifier, rng);
}

void Network::reset_classifier(ClassifierKind kind, std::uint64_t seed) {
  ParamStore rebuilt;
  for (const auto& p : params_) {
    if (p.name.rfind("head.cls.", 0) == 0 || p.name.rfind("head.aam.", 0) == 0) continue;
    rebuilt.add(p.name, p.value, p.trainable);
  }
  config_.classifier = kind;
  std::mt19937_64 rng(seed);
  add_classifier(rebuilt, config_, kind, rng);
  params_ = std::move(rebuilt);
}

bool Network::fits(const ArchCode& arch) const {
  if (arch.size() != capacity_.size()) return false;
  for (std::size_t l = 0; l < arch.size(); ++l) {
    const auto& a = arch[l];
    const auto& c = capacity_[l];
    if (a.branches < 1 || a.cdim < 1 || a.sdim < 1) return false;
    if (a.branches > c.branches || a.cdim > c.cdim || a.sdim > c.sdim) return false;
  }
  return true;
}

void Network::require_fits(const ArchCode& arch) const {
  if (space_) require_valid(arch, *space_);
  if (arch_ && arch != *arch_) throw ConfigError("candidate network only runs its own architecture");
  if (arch.size() != capacity_.size()) {
    throw ConfigError("architecture has " + std::to_string(arch.size()) + " layers, network has " +
                      std::to_string(capacity_.size()));
  }
  for (std::size_t l = 0; l < arch.size(); ++l) {
    const auto& a = arch[l];
    const auto& c = capacity_[l];
    if (a.branches > c.branches) {
      throw ShapeError("layer " + std::to_string(l) + ": b=" + std::to_string(a.branches) + " exceeds " +
                       std::to_string(c.branches) + " allocated branches");
    }
    if (a.branches < 1 || a.cdim < 1 || a.sdim < 1 || a.cdim > c.cdim || a.sdim > c.sdim) {
      throw ShapeError("layer " + std::to_string(l) + ": choice exceeds allocated capacity");
    }
  }
}

std::vector<std::size_t> layer_input_dims(const NetConfig& config, const ArchCode& arch) {
  std::vector<std::size_t> dims;
  std::size_t d = config.stem_channels;
  for (const auto& s : arch) {
    dims.push_back(d);
    d += static_cast<std::size_t>(s.cdim);
  }
  dims.push_back(d);
  return dims;
}

// ---------------------------------------------------------------------------
// Statistics pooling

NodeId stats_pool(Graph& g, NodeId h, double eps) {
  const Shape& sh = g.shape(h);
  if (sh.size() != 2 && sh.size() != 3) throw ShapeError("stats_pool: expects [T,C] or [B,T,C], got " + to_string(sh));
  const bool batched = sh.size() == 3;
  const std::size_t B = batched ? sh[0] : 1;
  const std::size_t T = sh[sh.size() - 2];
  const std::size_t C = sh.back();
  if (T < 2) throw ShapeError("stats_pool: needs at least 2 frames, got " + std::to_string(T));

  const NdArray& vh = g.value(h);
  NdArray y(batched ? Shape{B, 4 * C} : Shape{4 * C}, g.dtype());
  // Per (b, c): mean, floored std, whether the floor was active, third and fourth standardized moments.
  struct Moments {
    double mu, sigma, m3, m4;
    bool floored;
  };
  auto moments = std::make_shared<std::vector<Moments>>(B * C);
  const double invT = 1.0 / static_cast<double>(T);
  for (std::size_t b = 0; b < B; ++b) {
    const double* base = vh.raw() + b * T * C;
    for (std::size_t c = 0; c < C; ++c) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const double v = base[t * C + c];
        s1 += v;
        s2 += v * v;
      }
      const double mu = s1 * invT;
      const double var = std::max(0.0, s2 * invT - mu * mu);
      const double raw_sigma = std::sqrt(var);
      const bool floored = raw_sigma <= eps;
      const double sigma = floored ? eps : raw_sigma;
      double m3 = 0.0, m4 = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const double z = (base[t * C + c] - mu) / sigma;
        const double z2 = z * z;
        m3 += z2 * z;
        m4 += z2 * z2;
      }
      m3 *= invT;
      m4 *= invT;
      (*moments)[b * C + c] = {mu, sigma, m3, m4, floored};
      double* out = y.raw() + b * 4 * C;
      out[c] = mu;
      out[C + c] = sigma;
      out[2 * C + c] = m3;
      out[3 * C + c] = m4;
    }
  }
  return g.push("stats_pool", {h}, std::move(y), [h, moments, B, T, C](Graph& gr, NodeId self) {
    const NdArray& gy = gr.grad_accumulator(self);
    const NdArray& vh = gr.value(h);
    NdArray& gh = gr.grad_accumulator(h);
    const double invT = 1.0 / static_cast<double>(T);
    for (std::size_t b = 0; b < B; ++b) {
      const double* base = vh.raw() + b * T * C;
      double* gbase = gh.raw() + b * T * C;
      const double* go = gy.raw() + b * 4 * C;
      for (std::size_t c = 0; c < C; ++c) {
        const Moments& m = (*moments)[b * C + c];
        const double g_mu = go[c], g_sigma = go[C + c], g_skew = go[2 * C + c], g_kurt = go[3 * C + c];
        // mean of z^2 equals 1 unless the floor is active
        double m2 = 0.0;
        if (m.floored) {
          for (std::size_t t = 0; t < T; ++t) {
            const double z = (base[t * C + c] - m.mu) / m.sigma;
            m2 += z * z;
          }
          m2 *= invT;
        } else {
          m2 = 1.0;
        }
        const double live = m.floored ? 0.0 : 1.0;
        for (std::size_t t = 0; t < T; ++t) {
          const double z = (base[t * C + c] - m.mu) / m.sigma;
          const double z2 = z * z;
          double gx = g_mu * invT;
          gx += live * g_sigma * z * invT;
          gx += g_skew * 3.0 * invT / m.sigma * (z2 - m2 - live * z * m.m3);
          gx += g_kurt * 4.0 * invT / m.sigma * (z2 * z - m.m3 - live * z * m.m4);
          gbase[t * C + c] += gx;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Forward

namespace {

// Reads weights either as differentiable parameter slices (train) or as
// constants copied from an immutable network (eval).
class WeightReader {
 public:
  WeightReader(Graph& g, Network* mut, const Network& net, Mode mode, double bn_momentum)
      : g_(g), mut_(mut), net_(net), mode_(mode), bn_momentum_(bn_momentum) {}

  NodeId leaf(const std::string& name, Shape extents) {
    if (mode_ == Mode::Train) return g_.param_slice(mut_->params().get(name), std::move(extents));
    const Parameter& p = net_.params().get(name);
    return g_.constant(extents == p.value.shape() ? p.value : leading_slice(p.value, extents));
  }

  NodeId batch_norm(NodeId x, const std::string& prefix, std::size_t channels) {
    NodeId gamma = leaf(prefix + "gamma", {channels});
    NodeId beta = leaf(prefix + "beta", {channels});
    const double eps = net_.config().bn_eps;
    if (mode_ == Mode::Train) {
      RunningStats stats{&mut_->params().get(prefix + "mean"), &mut_->params().get(prefix + "var")};
      return batch_norm_train(g_, x, gamma, beta, stats, bn_momentum_, eps);
    }
    NodeId mean = leaf(prefix + "mean", {channels});
    NodeId var = leaf(prefix + "var", {channels});
    return batch_norm_eval(g_, x, gamma, beta, mean, var, eps);
  }

  Graph& graph() { return g_; }
  const Network& net() const { return net_; }

 private:
  Graph& g_;
  Network* mut_;
  const Network& net_;
  Mode mode_;
  double bn_momentum_;
};

NodeId block_impl(WeightReader& rd, std::size_t layer, NodeId h, const SlotChoice& choice,
                  std::vector<NodeId>* selection_weights) {
  Graph& g = rd.graph();
  const Network& net = rd.net();
  const NetConfig& cfg = net.config();
  const Shape& sh = g.shape(h);
  if (sh.size() != 3) throw ShapeError("dtdnn_block: expects [B,T,C], got " + to_string(sh));
  const SlotChoice& cap = net.capacity().at(layer);
  if (choice.branches > cap.branches) {
    throw ShapeError("dtdnn_block: b=" + std::to_string(choice.branches) + " exceeds " +
                     std::to_string(cap.branches) + " allocated branches");
  }
  if (choice.branches < 1 || choice.cdim < 1 || choice.sdim < 1 || choice.cdim > cap.cdim || choice.sdim > cap.sdim) {
    throw ShapeError("dtdnn_block: choice exceeds allocated capacity at layer " + std::to_string(layer));
  }
  const std::size_t din = sh[2];
  if (din > net.layer_input_capacity(layer)) {
    throw ShapeError("dtdnn_block: input width " + std::to_string(din) + " exceeds allocated " +
                     std::to_string(net.layer_input_capacity(layer)));
  }
  const std::size_t B = sh[0];
  const std::size_t c = static_cast<std::size_t>(choice.cdim);
  const std::size_t d = static_cast<std::size_t>(choice.sdim);
  const std::size_t w = cfg.bottleneck_width(choice.cdim);
  const std::size_t K = cfg.branch_kernel;
  const std::string p = block_prefix(layer);

  NodeId a = relu(g, rd.batch_norm(h, p + "bn_in.", din));
  a = affine(g, a, rd.leaf(p + "bottleneck.w", {din, w}), rd.leaf(p + "bottleneck.b", {w}));
  a = relu(g, rd.batch_norm(a, p + "bn_mid.", w));

  std::vector<NodeId> branches;
  for (int i = 0; i < choice.branches; ++i) {
    const std::string bp = p + "branch" + std::to_string(i) + ".";
    branches.push_back(conv1d(g, a, rd.leaf(bp + "w", {K, w, c}), rd.leaf(bp + "b", {c}),
                              static_cast<std::size_t>(kBranchDilations[i])));
  }
  NodeId summed = branches[0];
  for (std::size_t i = 1; i < branches.size(); ++i) summed = add(g, summed, branches[i]);

  NodeId pooled = stats_pool(g, summed, cfg.stats_eps);
  NodeId select_w = reshape(g, rd.leaf(p + "select.w", {4, c, d}), {4 * c, d});
  NodeId z = relu(g, affine(g, pooled, select_w, rd.leaf(p + "select.b", {d})));

  std::vector<NodeId> logits;
  for (int i = 0; i < choice.branches; ++i) {
    const std::string gp = p + "gate" + std::to_string(i) + ".";
    logits.push_back(affine(g, z, rd.leaf(gp + "w", {d, c}), rd.leaf(gp + "b", {c})));
  }
  const std::size_t nb = static_cast<std::size_t>(choice.branches);
  NodeId stacked = reshape(g, concat(g, logits, 1), {B, nb, c});
  NodeId u = softmax(g, stacked, 1);
  if (selection_weights) selection_weights->push_back(u);

  NodeId mixed{};
  for (std::size_t i = 0; i < nb; ++i) {
    NodeId ui = reshape(g, slice(g, u, 1, i, i + 1), {B, c});
    NodeId term = scale_channels(g, branches[i], ui);
    mixed = i == 0 ? term : add(g, mixed, term);
  }
  const NodeId parts[] = {h, mixed};
  return concat(g, parts, 2);
}

ForwardResult forward_impl(WeightReader& rd, const ArchCode& arch, NodeId batch, const ForwardOptions& opts) {
  Graph& g = rd.graph();
  const Network& net = rd.net();
  const NetConfig& cfg = net.config();
  net.require_fits(arch);
  const Shape& sb = g.shape(batch);
  if (sb.size() != 3 || sb[2] != cfg.input_dim) {
    throw ShapeError("forward: batch must be [B,T," + std::to_string(cfg.input_dim) + "], got " + to_string(sb));
  }
  if (sb[1] < 2) throw ShapeError("forward: need at least 2 frames");

  ForwardResult r;
  NodeId h = conv1d(g, batch, rd.leaf("stem.w", {cfg.stem_kernel, cfg.input_dim, cfg.stem_channels}),
                    rd.leaf("stem.b", {cfg.stem_channels}), 1);
  for (std::size_t l = 0; l < arch.size(); ++l) {
    h = block_impl(rd, l, h, arch[l], opts.selection_weights);
    r.block_outputs.push_back(h);
  }
  const std::size_t D = g.shape(h)[2];
  NodeId a = relu(g, rd.batch_norm(h, "head.bn.", D));
  NodeId pooled = stats_pool(g, a, cfg.stats_eps);
  NodeId embed_w = reshape(g, rd.leaf("head.embed.w", {4, D, cfg.embedding_dim}), {4 * D, cfg.embedding_dim});
  NodeId projected = affine(g, pooled, embed_w, rd.leaf("head.embed.b", {cfg.embedding_dim}));
  r.embeddings = rd.batch_norm(projected, "head.embed_bn.", cfg.embedding_dim);
  if (opts.compute_logits) {
    if (cfg.classifier == ClassifierKind::Softmax) {
      r.logits = affine(g, r.embeddings, rd.leaf("head.cls.w", {cfg.embedding_dim, cfg.num_speakers}),
                        rd.leaf("head.cls.b", {cfg.num_speakers}));
    } else {
      NodeId w = l2_normalize(g, rd.leaf("head.aam.w", {cfg.embedding_dim, cfg.num_speakers}), 0);
      r.logits = affine(g, l2_normalize(g, r.embeddings, 1), w, std::nullopt);
    }
  }
  return r;
}

}  // namespace

NodeId dtdnn_block(Graph& g, Network& net, std::size_t layer, NodeId h, const SlotChoice& choice,
                   const ForwardOptions& opts) {
  WeightReader rd(g, &net, net, opts.mode, opts.bn_momentum.value_or(net.config().bn_momentum));
  return block_impl(rd, layer, h, choice, opts.selection_weights);
}

ForwardResult forward(Graph& g, Network& net, const ArchCode& arch, NodeId batch, const ForwardOptions& opts) {
  WeightReader rd(g, &net, net, opts.mode, opts.bn_momentum.value_or(net.config().bn_momentum));
  return forward_impl(rd, arch, batch, opts);
}

ForwardResult forward_eval(Graph& g, const Network& net, const ArchCode& arch, NodeId batch, bool compute_logits) {
  WeightReader rd(g, nullptr, net, Mode::Eval, net.config().bn_momentum);
  ForwardOptions opts;
  opts.mode = Mode::Eval;
  opts.compute_logits = compute_logits;
  return forward_impl(rd, arch, batch, opts);
}

std::vector<double> embed(const Network& net, const ArchCode& arch, const NdArray& features) {
  if (features.rank() != 2) throw ShapeError("embed: features must be [T,F]");
  Graph g(DType::F32);
  NodeId x = g.constant(features.reshaped({1, features.dim(0), features.dim(1)}));
  const ForwardResult r = forward_eval(g, net, arch, x, false);
  const auto v = g.value(r.embeddings).data();
  return {v.begin(), v.end()};
}

Network instantiate(const Network& supernet, const ArchCode& arch) {
  supernet.require_fits(arch);
  Network cand(supernet.config(), std::vector<SlotChoice>(arch.begin(), arch.end()), 0);
  for (auto& p : cand.params()) {
    const Parameter& src = supernet.params().get(p.name);
    p.value = leading_slice(src.value, p.value.shape());
  }
  cand.set_arch(arch);
  return cand;
}

std::size_t count_params(const ArchCode& arch, const NetConfig& cfg, bool include_classifier) {
  std::size_t n = cfg.stem_kernel * cfg.input_dim * cfg.stem_channels + cfg.stem_channels;
  std::size_t din = cfg.stem_channels;
  for (const auto& s : arch) {
    const std::size_t b = static_cast<std::size_t>(s.branches);
    const std::size_t c = static_cast<std::size_t>(s.cdim);
    const std::size_t d = static_cast<std::size_t>(s.sdim);
    const std::size_t w = cfg.bottleneck_width(s.cdim);
    n += 2 * din;                                   // input norm
    n += din * w + w;                               // bottleneck
    n += 2 * w;                                     // bottleneck norm
    n += b * (cfg.branch_kernel * w * c + c);       // dilated branch convolutions
    n += 4 * c * d + d;                             // selection fnn
    n += b * (d * c + c);                           // per-branch gates
    din += c;
  }
  n += 2 * din;                                     // head norm
  n += 4 * din * cfg.embedding_dim + cfg.embedding_dim;
  n += 2 * cfg.embedding_dim;                       // embedding norm
  if (include_classifier) {
    n += cfg.embedding_dim * cfg.num_speakers;
    if (cfg.classifier == ClassifierKind::Softmax) n += cfg.num_speakers;
  }
  return n;
}

}  // namespace speechnas
