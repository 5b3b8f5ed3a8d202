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
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "speechnas/archspace.hpp"
#include "speechnas/graph.hpp"

namespace speechnas {

/// Which classifier sits on top of the embedding.
enum class ClassifierKind {
  Softmax,  // affine with bias; trained with cross entropy
  Cosine,   // bias-free weight columns; trained with AAM + MHE
};

std::string to_string(ClassifierKind kind);
ClassifierKind parse_classifier_kind(std::string_view text);

struct NetConfig {
  std::size_t input_dim = 30;
  std::size_t stem_channels = 128;
  std::size_t stem_kernel = 5;
  std::size_t branch_kernel = 3;
  /// Bottleneck width of a block with feature width c is round(ratio * c).
  double bottleneck_ratio = 2.0;
  std::size_t embedding_dim = 128;
  std::size_t num_speakers = 2;
  ClassifierKind classifier = ClassifierKind::Softmax;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  /// Floor on the standard deviation inside statistics pooling.
  double stats_eps = 1e-8;

  std::size_t bottleneck_width(int cdim) const;
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Max-shaped weight container.
///
/// Each layer is allocated for `capacity[l]` (the largest b, c, d it must
/// host); an architecture selects a sub-network by reading leading slices.
/// A supernet has the space maxima in every layer; a candidate has capacity
/// equal to its own architecture and therefore no slack.
class Network {
 public:
  Network(NetConfig config, std::vector<SlotChoice> capacity, std::uint64_t init_seed);

  static Network supernet(const NetConfig& config, const SearchSpace& space, std::uint64_t init_seed);

  const NetConfig& config() const noexcept { return config_; }
  const std::vector<SlotChoice>& capacity() const noexcept { return capacity_; }
  std::size_t num_layers() const noexcept { return capacity_.size(); }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  /// Search space of a supernet, or the fixed architecture of a candidate.
  const std::optional<SearchSpace>& space() const noexcept { return space_; }
  const std::optional<ArchCode>& arch() const noexcept { return arch_; }
  void set_space(SearchSpace space) { space_ = std::move(space); }
  void set_arch(ArchCode arch) { arch_ = std::move(arch); }
  bool is_candidate() const noexcept { return arch_.has_value(); }

  /// Allocated input width of layer l: stem + sum of earlier capacities.
  std::size_t layer_input_capacity(std::size_t layer) const;
  std::size_t output_capacity() const;

  /// True if every slot fits within the allocated capacity.
  bool fits(const ArchCode& arch) const;
  /// Throws unless the architecture can run on this network.
  void require_fits(const ArchCode& arch) const;

  /// Replaces the classifier with a freshly initialised one of the given kind.
  void reset_classifier(ClassifierKind kind, std::uint64_t seed);

 private:
  void build(std::uint64_t init_seed);

  NetConfig config_;
  std::vector<SlotChoice> capacity_;
  ParamStore params_;
  std::optional<SearchSpace> space_;
  std::optional<ArchCode> arch_;
};

/// Input width of every layer for a concrete architecture (dense connectivity).
std::vector<std::size_t> layer_input_dims(const NetConfig& config, const ArchCode& arch);

/// High-order statistics pooling over frames: [mean | std | skewness | kurtosis].
/// h: [T, C] -> [4C] or [B, T, C] -> [B, 4C]; needs T >= 2.
NodeId stats_pool(Graph& g, NodeId h, double eps = 1e-8);

struct ForwardOptions {
  Mode mode = Mode::Eval;
  /// Overrides config().bn_momentum for running-statistic updates in train mode.
  std::optional<double> bn_momentum;
  bool compute_logits = true;
  /// If set, receives the per-block channel-selection weights [B, b, c].
  std::vector<NodeId>* selection_weights = nullptr;
};

struct ForwardResult {
  NodeId embeddings;  // [B, E]
  NodeId logits;      // [B, C]; cosine similarities for a Cosine classifier
  std::vector<NodeId> block_outputs;
};

/// One D-TDNN block on its own: h [B, T, Din] -> [B, T, Din + c].
/// Weights are read from `net` layer `layer` through leading slices.
NodeId dtdnn_block(Graph& g, Network& net, std::size_t layer, NodeId h, const SlotChoice& choice,
                   const ForwardOptions& opts);

/// Single-path forward through the shared weights selected by `arch`.
/// batch: [B, T, F]. Train mode records parameter use for the optimizer and
/// updates running statistics; eval mode reads running statistics.
ForwardResult forward(Graph& g, Network& net, const ArchCode& arch, NodeId batch, const ForwardOptions& opts);

/// Eval-mode forward that never mutates the network; safe to run concurrently.
ForwardResult forward_eval(Graph& g, const Network& net, const ArchCode& arch, NodeId batch,
                           bool compute_logits = false);

/// Embeds one utterance [T, F] with an eval-mode forward.
std::vector<double> embed(const Network& net, const ArchCode& arch, const NdArray& features);

/// Standalone copy of the leading slices selected by `arch`.
Network instantiate(const Network& supernet, const ArchCode& arch);

/// Trainable scalars of the candidate for `arch` (running statistics excluded).
std::size_t count_params(const ArchCode& arch, const NetConfig& config, bool include_classifier);

// Checkpoint file: "SNCK", u32 version, u32 manifest length, manifest text,
// then every tensor as little-endian float32 in manifest order.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace speechnas
