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

#include <compare>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace speechnas {

/// One layer's choice: branch count, D-TDNN feature width and selection width.
struct SlotChoice {
  int branches = 2;
  int cdim = 64;
  int sdim = 32;

  friend auto operator<=>(const SlotChoice&, const SlotChoice&) = default;
};

/// Per-layer architecture encoding. Serialized as `b,c,d;b,c,d;...`.
class ArchCode {
 public:
  ArchCode() = default;
  explicit ArchCode(std::vector<SlotChoice> slots) : slots_(std::move(slots)) {}

  static ArchCode parse(std::string_view text);
  std::string to_string() const;

  std::size_t size() const noexcept { return slots_.size(); }
  const SlotChoice& operator[](std::size_t i) const { return slots_[i]; }
  SlotChoice& operator[](std::size_t i) { return slots_[i]; }
  const std::vector<SlotChoice>& slots() const noexcept { return slots_; }
  auto begin() const noexcept { return slots_.begin(); }
  auto end() const noexcept { return slots_.end(); }

  friend auto operator<=>(const ArchCode&, const ArchCode&) = default;
  friend bool operator==(const ArchCode&, const ArchCode&) = default;

 private:
  std::vector<SlotChoice> slots_;
};

/// Branch i (0-based) always uses this dilation.
inline constexpr int kBranchDilations[3] = {1, 3, 5};
inline constexpr int kMaxBranches = 3;

struct SearchSpace {
  std::size_t num_layers = 18;
  std::vector<int> branch_options;
  std::vector<int> cdim_options;
  std::vector<int> sdim_options;

  /// Throws ConfigError if an option set is empty, unsorted or out of range.
  void check() const;
  std::size_t per_slot_candidates() const noexcept {
    return branch_options.size() * cdim_options.size() * sdim_options.size();
  }
  /// Human-readable total size, e.g. "16^18".
  std::string size_string() const;
  double log10_size() const;

  int max_branches() const;
  int max_cdim() const;
  int max_sdim() const;

  /// The i-th of the per_slot_candidates() choices (b major, then c, then d).
  SlotChoice candidate(std::size_t i) const;
  std::size_t candidate_index(const SlotChoice& s) const;

  bool contains(const SlotChoice& s) const;

  friend bool operator==(const SearchSpace&, const SearchSpace&) = default;
};

/// `space1`, `space2`, `space3` (the three experimental subsets), `full`, or
/// the small 4-layer `desk` space.
SearchSpace make_space(std::string_view variant);

ArchCode sample_uniform(const SearchSpace& space, std::mt19937_64& rng);
ArchCode sample_uniform(const SearchSpace& space, std::uint64_t seed);

struct Violation {
  std::size_t slot;  // == code size for length violations
  std::string message;
};

/// Every slot outside the space's options, or a length mismatch. Empty means valid.
std::vector<Violation> validate(const ArchCode& arch, const SearchSpace& space);
bool is_valid(const ArchCode& arch, const SearchSpace& space);
/// Throws ConfigError listing the violations.
void require_valid(const ArchCode& arch, const SearchSpace& space);

/// Searched structures `speechnas3`, `speechnas4`, `speechnas5`.
ArchCode preset(std::string_view name);
/// The space variant a preset was searched in.
std::string preset_space(std::string_view name);
bool is_preset_name(std::string_view name);

/// Fraction of differing (b, c, d) components over all 3L entries.
double hamming_distance(const ArchCode& a, const ArchCode& b);
std::size_t differing_components(const ArchCode& a, const ArchCode& b);

/// Resamples each slot uniformly from the space with probability `rate`.
ArchCode mutate(const ArchCode& arch, double rate, std::mt19937_64& rng, const SearchSpace& space);
ArchCode mutate(const ArchCode& arch, double rate, std::uint64_t seed, const SearchSpace& space);

}  // namespace speechnas
