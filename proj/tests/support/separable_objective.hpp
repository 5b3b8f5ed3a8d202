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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "speechnas/archspace.hpp"

namespace speechnas::testing {

/// f(a) = sum over slots of pb[slot][b] + pc[slot][c] + pd[slot][d], every
/// entry U(0, 1). Tabulated per slot candidate.
class SeparableObjective {
 public:
  SeparableObjective(const SearchSpace& space, std::uint64_t seed) : space_(space) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto draw = [&](std::size_t n) {
      std::vector<double> v(n);
      for (auto& x : v) x = u(rng);
      return v;
    };
    auto pos = [](const std::vector<int>& opts, int v) {
      return static_cast<std::size_t>(std::find(opts.begin(), opts.end(), v) - opts.begin());
    };
    table_.assign(space.num_layers, std::vector<double>(space.per_slot_candidates()));
    for (auto& row : table_) {
      const auto pb = draw(space.branch_options.size());
      const auto pc = draw(space.cdim_options.size());
      const auto pd = draw(space.sdim_options.size());
      for (std::size_t k = 0; k < row.size(); ++k) {
        const SlotChoice s = space.candidate(k);
        row[k] = pb[pos(space.branch_options, s.branches)] + pc[pos(space.cdim_options, s.cdim)] +
                 pd[pos(space.sdim_options, s.sdim)];
      }
    }
  }

  double operator()(const ArchCode& a) const {
    double f = 0.0;
    for (std::size_t l = 0; l < table_.size(); ++l) f += table_[l][space_.candidate_index(a[l])];
    return f;
  }

  double optimum() const {
    double f = 0.0;
    for (const auto& row : table_) f += *std::min_element(row.begin(), row.end());
    return f;
  }

  ArchCode argmin() const {
    std::vector<SlotChoice> slots;
    for (const auto& row : table_) {
      slots.push_back(space_.candidate(static_cast<std::size_t>(std::min_element(row.begin(), row.end()) - row.begin())));
    }
    return ArchCode(slots);
  }

  /// Exact fraction of the space with f <= target, by pruned enumeration of
  /// per-slot excesses over the slot minimum.
  double fraction_within(double target) const {
    const double budget = target - optimum();
    if (budget < 0.0) return 0.0;
    std::vector<std::vector<double>> excess;
    for (const auto& row : table_) {
      const double m = *std::min_element(row.begin(), row.end());
      std::vector<double> e;
      for (double v : row) e.push_back(v - m);
      std::sort(e.begin(), e.end());
      excess.push_back(e);
    }
    const double k = static_cast<double>(space_.per_slot_candidates());
    // Count of codes, scaled by k^-L as we go to stay in range.
    auto count = [&](auto&& self, std::size_t l, double left) -> double {
      if (l == excess.size()) return 1.0;
      double c = 0.0;
      for (double e : excess[l]) {
        if (e > left + 1e-12) break;
        c += self(self, l + 1, left - e);
      }
      return c / k;
    };
    return count(count, 0, budget);
  }

 private:
  SearchSpace space_;
  std::vector<std::vector<double>> table_;
};

/// Median number of uniform draws (with replacement) until the first success.
inline double geometric_median(double p) {
  if (p <= 0.0) return INFINITY;
  if (p >= 1.0) return 1.0;
  return std::ceil(std::log(0.5) / std::log1p(-p));
}

}  // namespace speechnas::testing
