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
#include <string>
#include <string_view>
#include <vector>

#include "speechnas/archspace.hpp"
#include "speechnas/data.hpp"
#include "speechnas/losses.hpp"
#include "speechnas/network.hpp"

namespace speechnas {

/// SGD recipe with step decay. Milestones are 1-based epochs at which the
/// learning rate is multiplied by `decay`.
struct Schedule {
  double lr = 0.01;
  std::vector<std::size_t> milestones{14, 20};
  double decay = 0.1;
  double momentum = 0.95;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 26;
  std::size_t crop_min = 200;
  std::size_t crop_max = 400;

  /// Learning rate used during 1-based epoch `epoch`.
  double lr_at(std::size_t epoch) const;
  void check(std::string_view section) const;
};

struct SearchConfig {
  std::size_t n1 = 100;
  std::size_t n2 = 64;
  std::size_t init_count = 1200;
  std::size_t pool_size = 10000;
  double mutation_rate = 0.1;
  std::size_t num_parents = 10;
  std::uint64_t seed = 0;
  /// Train-mode batches used to re-estimate BN statistics for each evaluated path.
  std::size_t bn_batches = 8;
};

struct RunConfig {
  std::string profile = "paper";
  std::string space_variant = "full";
  SearchSpace space;
  std::filesystem::path data_dir;
  SynthSpec data;
  NetConfig net;
  Schedule train;
  std::string supernet_loss = "ce";
  std::uint64_t seed = 0;
  Schedule retrain;
  bool retrain_warm_start = false;
  AamMheOptions loss;
  SearchConfig search;
  /// Frames per utterance used when embedding for evaluation; 0 keeps all.
  std::size_t eval_max_frames = 0;

  /// Defaults of a named profile: `paper` or `desk`.
  static RunConfig profile_defaults(std::string_view name);
  /// Parses `section.key = value` lines; a `profile` key selects the base defaults.
  static RunConfig parse(std::string_view text, std::string_view source = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  /// Every key with its current value, one `key = value` per line.
  std::string to_text() const;
  void check() const;
};

struct ConfigKeyDoc {
  std::string key;
  std::string description;
};
/// Documentation of every accepted key, in file order.
std::vector<ConfigKeyDoc> config_keys();

}  // namespace speechnas
