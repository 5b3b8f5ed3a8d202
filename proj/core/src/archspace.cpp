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

#include "speechnas/archspace.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <sstream>

#include "speechnas/errors.hpp"

namespace speechnas {

namespace {

int parse_int(std::string_view text) {
  int v = 0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\r')) --last;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw FormatError("arch code: expected integer, got '" + std::string(text) + "'");
  }
  return v;
}

std::string join(const std::vector<int>& v) {
  std::string s = "{";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s + "}";
}

bool member(const std::vector<int>& opts, int v) { return std::find(opts.begin(), opts.end(), v) != opts.end(); }

}  // namespace

ArchCode ArchCode::parse(std::string_view text) {
  std::vector<SlotChoice> slots;
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r' || text.back() == ' ')) text.remove_suffix(1);
  if (text.empty()) throw FormatError("arch code: empty string");
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t semi = std::min(text.find(';', pos), text.size());
    const std::string_view slot = text.substr(pos, semi - pos);
    const std::size_t c1 = slot.find(',');
    const std::size_t c2 = c1 == std::string_view::npos ? c1 : slot.find(',', c1 + 1);
    if (c1 == std::string_view::npos || c2 == std::string_view::npos || slot.find(',', c2 + 1) != std::string_view::npos) {
      throw FormatError("arch code: slot " + std::to_string(slots.size()) + " must be 'b,c,d', got '" +
                        std::string(slot) + "'");
    }
    slots.push_back({parse_int(slot.substr(0, c1)), parse_int(slot.substr(c1 + 1, c2 - c1 - 1)),
                     parse_int(slot.substr(c2 + 1))});
    pos = semi + 1;
  }
  return ArchCode(std::move(slots));
}

std::string ArchCode::to_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (i) os << ';';
    os << slots_[i].branches << ',' << slots_[i].cdim << ',' << slots_[i].sdim;
  }
  return os.str();
}

void SearchSpace::check() const {
  if (num_layers < 1) throw ConfigError("search space needs at least one layer");
  auto check_set = [](const std::vector<int>& v, const char* what) {
    if (v.empty()) throw ConfigError(std::string("search space: empty ") + what + " option set");
    if (!std::is_sorted(v.begin(), v.end()) || std::adjacent_find(v.begin(), v.end()) != v.end()) {
      throw ConfigError(std::string("search space: ") + what + " options must be strictly increasing");
    }
    if (v.front() < 1) throw ConfigError(std::string("search space: ") + what + " options must be positive");
  };
  check_set(branch_options, "branch");
  check_set(cdim_options, "cdim");
  check_set(sdim_options, "sdim");
  if (branch_options.back() > kMaxBranches) throw ConfigError("search space: at most 3 branches are supported");
}

std::string SearchSpace::size_string() const {
  return std::to_string(per_slot_candidates()) + "^" + std::to_string(num_layers);
}

double SearchSpace::log10_size() const {
  return static_cast<double>(num_layers) * std::log10(static_cast<double>(per_slot_candidates()));
}

int SearchSpace::max_branches() const { return branch_options.back(); }
int SearchSpace::max_cdim() const { return cdim_options.back(); }
int SearchSpace::max_sdim() const { return sdim_options.back(); }

SlotChoice SearchSpace::candidate(std::size_t i) const {
  const std::size_t nd = sdim_options.size();
  const std::size_t nc = cdim_options.size();
  return {branch_options.at(i / (nc * nd)), cdim_options.at((i / nd) % nc), sdim_options.at(i % nd)};
}

std::size_t SearchSpace::candidate_index(const SlotChoice& s) const {
  auto pos = [](const std::vector<int>& v, int x) {
    auto it = std::find(v.begin(), v.end(), x);
    if (it == v.end()) throw ConfigError("slot value " + std::to_string(x) + " not in space");
    return static_cast<std::size_t>(it - v.begin());
  };
  return (pos(branch_options, s.branches) * cdim_options.size() + pos(cdim_options, s.cdim)) * sdim_options.size() +
         pos(sdim_options, s.sdim);
}

bool SearchSpace::contains(const SlotChoice& s) const {
  return member(branch_options, s.branches) && member(cdim_options, s.cdim) && member(sdim_options, s.sdim);
}

SearchSpace make_space(std::string_view variant) {
  SearchSpace s;
  s.num_layers = 18;
  if (variant == "space1") {
    s.branch_options = {2};
    s.cdim_options = {64, 96, 128};
    s.sdim_options = {32, 64};
  } else if (variant == "space2") {
    s.branch_options = {2, 3};
    s.cdim_options = {64, 128, 192};
    s.sdim_options = {32};
  } else if (variant == "space3") {
    s.branch_options = {2, 3};
    s.cdim_options = {128, 192};
    s.sdim_options = {32, 64};
  } else if (variant == "full") {
    s.branch_options = {2, 3};
    s.cdim_options = {64, 96, 128, 192};
    s.sdim_options = {32, 64};
  } else if (variant == "desk") {
    s.num_layers = 4;
    s.branch_options = {2, 3};
    s.cdim_options = {16, 32};
    s.sdim_options = {8, 16};
  } else {
    throw ConfigError("unknown search space variant: " + std::string(variant));
  }
  return s;
}

ArchCode sample_uniform(const SearchSpace& space, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, space.per_slot_candidates() - 1);
  std::vector<SlotChoice> slots;
  slots.reserve(space.num_layers);
  for (std::size_t l = 0; l < space.num_layers; ++l) slots.push_back(space.candidate(pick(rng)));
  return ArchCode(std::move(slots));
}

ArchCode sample_uniform(const SearchSpace& space, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_uniform(space, rng);
}

std::vector<Violation> validate(const ArchCode& arch, const SearchSpace& space) {
  std::vector<Violation> out;
  if (arch.size() != space.num_layers) {
    out.push_back({arch.size(), "length " + std::to_string(arch.size()) + " != " +
                                    std::to_string(space.num_layers) + " layers"});
  }
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const SlotChoice& s = arch[i];
    if (!member(space.branch_options, s.branches)) {
      out.push_back({i, "b=" + std::to_string(s.branches) + " not in " + join(space.branch_options)});
    }
    if (!member(space.cdim_options, s.cdim)) {
      out.push_back({i, "c=" + std::to_string(s.cdim) + " not in " + join(space.cdim_options)});
    }
    if (!member(space.sdim_options, s.sdim)) {
      out.push_back({i, "d=" + std::to_string(s.sdim) + " not in " + join(space.sdim_options)});
    }
  }
  return out;
}

bool is_valid(const ArchCode& arch, const SearchSpace& space) { return validate(arch, space).empty(); }

void require_valid(const ArchCode& arch, const SearchSpace& space) {
  const auto v = validate(arch, space);
  if (v.empty()) return;
  std::string msg = "architecture does not fit the search space:";
  for (const auto& x : v) msg += " [slot " + std::to_string(x.slot) + ": " + x.message + "]";
  throw ConfigError(msg);
}

namespace {

// Per-layer values of the three searched networks, layers 1..18.
constexpr std::array<std::array<int, 2>, 18> kSpeechNas3 = {{
    {96, 64}, {128, 32}, {96, 32}, {96, 32}, {96, 32}, {64, 64}, {64, 64}, {96, 64}, {64, 64},
    {64, 32}, {64, 32}, {96, 64}, {96, 64}, {96, 32}, {128, 32}, {128, 32}, {96, 64}, {96, 64},
}};  // (c, d), b = 2
constexpr std::array<std::array<int, 2>, 18> kSpeechNas4 = {{
    {3, 128}, {3, 64}, {3, 128}, {3, 192}, {2, 192}, {2, 64}, {3, 64}, {2, 64}, {3, 64},
    {3, 64}, {3, 128}, {3, 192}, {3, 64}, {2, 192}, {2, 128}, {3, 128}, {2, 128}, {3, 192},
}};  // (b, c), d = 32
constexpr std::array<std::array<int, 3>, 18> kSpeechNas5 = {{
    {3, 128, 64}, {3, 192, 32}, {3, 192, 64}, {3, 192, 64}, {2, 192, 32}, {2, 192, 64},
    {3, 192, 32}, {3, 128, 32}, {3, 192, 64}, {2, 128, 64}, {3, 128, 64}, {2, 192, 64},
    {2, 192, 32}, {2, 128, 64}, {2, 192, 32}, {2, 192, 64}, {3, 192, 32}, {2, 192, 64},
}};

}  // namespace

bool is_preset_name(std::string_view name) {
  return name == "speechnas3" || name == "speechnas4" || name == "speechnas5";
}

ArchCode preset(std::string_view name) {
  std::vector<SlotChoice> slots;
  if (name == "speechnas3") {
    for (const auto& r : kSpeechNas3) slots.push_back({2, r[0], r[1]});
  } else if (name == "speechnas4") {
    for (const auto& r : kSpeechNas4) slots.push_back({r[0], r[1], 32});
  } else if (name == "speechnas5") {
    for (const auto& r : kSpeechNas5) slots.push_back({r[0], r[1], r[2]});
  } else {
    throw ConfigError("unknown preset: " + std::string(name));
  }
  return ArchCode(std::move(slots));
}

std::string preset_space(std::string_view name) {
  if (name == "speechnas3") return "space1";
  if (name == "speechnas4") return "space2";
  if (name == "speechnas5") return "space3";
  throw ConfigError("unknown preset: " + std::string(name));
}

std::size_t differing_components(const ArchCode& a, const ArchCode& b) {
  if (a.size() != b.size()) {
    throw ShapeError("hamming_distance: length mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    n += (a[i].branches != b[i].branches) + (a[i].cdim != b[i].cdim) + (a[i].sdim != b[i].sdim);
  }
  return n;
}

double hamming_distance(const ArchCode& a, const ArchCode& b) {
  const std::size_t n = differing_components(a, b);
  if (a.size() == 0) return 0.0;
  return static_cast<double>(n) / static_cast<double>(3 * a.size());
}

ArchCode mutate(const ArchCode& arch, double rate, std::mt19937_64& rng, const SearchSpace& space) {
  if (rate < 0.0 || rate > 1.0) throw ConfigError("mutation rate must be in [0,1]");
  std::bernoulli_distribution flip(rate);
  std::uniform_int_distribution<std::size_t> pick(0, space.per_slot_candidates() - 1);
  std::vector<SlotChoice> slots(arch.begin(), arch.end());
  for (auto& s : slots) {
    if (flip(rng)) s = space.candidate(pick(rng));
  }
  return ArchCode(std::move(slots));
}

ArchCode mutate(const ArchCode& arch, double rate, std::uint64_t seed, const SearchSpace& space) {
  std::mt19937_64 rng(seed);
  return mutate(arch, rate, rng, space);
}

}  // namespace speechnas
