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
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "speechnas/archspace.hpp"

namespace speechnas {

/// sigma_f^2 * exp(-gamma * hamming_distance(a1, a2)).
double kernel(const ArchCode& a1, const ArchCode& a2, double gamma, double signal_var);
Eigen::MatrixXd kernel_matrix(std::span<const ArchCode> codes, double gamma, double signal_var);

struct Observation {
  ArchCode arch;
  double value = 0.0;
};

struct GpHyper {
  double gamma = 1.0;
  double signal_var = 1.0;
  double noise_var = 1e-4;
  double mean = 0.0;
};

/// Search box for the marginal-likelihood fit. gamma and the noise ratio
/// noise_var / signal_var are gridded in log space; signal_var and mean are
/// profiled in closed form and clamped to their bounds.
struct GpBounds {
  double gamma_min = 0.1;
  double gamma_max = 200.0;
  double ratio_min = 1e-6;
  double ratio_max = 10.0;
  double signal_var_min = 1e-8;
  double signal_var_max = 10.0;
  double noise_var_min = 1e-10;
  double noise_var_max = 10.0;
  std::size_t gamma_steps = 10;
  std::size_t ratio_steps = 6;
  std::size_t refine_iters = 24;
};

class GPModel {
 public:
  struct Prediction {
    double mean = 0.0;
    double std = 0.0;
  };

  GPModel() = default;

  /// Conditions on `obs` with fixed hyper-parameters.
  static GPModel condition(std::vector<Observation> obs, const GpHyper& hyper);
  /// Maximizes the exact marginal log-likelihood over `bounds`. Deterministic.
  static GPModel fit(std::vector<Observation> obs, const GpBounds& bounds = {});

  /// Exact marginal log-likelihood of `obs` under `hyper`.
  static double log_marginal_likelihood(std::span<const Observation> obs, const GpHyper& hyper);
  /// Best (signal_var, noise_var, mean) for fixed gamma and noise ratio, clamped to `bounds`.
  static GpHyper profile(std::span<const Observation> obs, double gamma, double ratio, const GpBounds& bounds);
  /// The (gamma, ratio) grid used by fit().
  static std::vector<std::pair<double, double>> grid(const GpBounds& bounds);

  bool fitted() const noexcept { return fitted_; }
  const GpHyper& hyper() const noexcept { return hyper_; }
  double jitter() const noexcept { return jitter_; }
  double lml() const noexcept { return lml_; }
  const std::vector<Observation>& observations() const noexcept { return obs_; }

  Prediction posterior(const ArchCode& arch) const;
  std::vector<Prediction> posterior(std::span<const ArchCode> archs) const;
  /// Probability that the objective at `arch` is below tau.
  double pof(const ArchCode& arch, double tau) const;

 private:
  void factorize();

  std::vector<Observation> obs_;
  GpHyper hyper_;
  double jitter_ = 0.0;
  double lml_ = 0.0;
  bool fitted_ = false;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
};

/// Phi((tau - mean) / max(std, 1e-9)).
double pof(double mean, double std, double tau);
double pof(const GPModel& gp, const ArchCode& arch, double tau);

/// Evaluated architectures in evaluation order. Re-adding a code averages its value.
class SearchHistory {
 public:
  struct Entry {
    ArchCode arch;
    double value = 0.0;
    std::size_t count = 1;
  };

  /// Returns true if `arch` was new.
  bool add(const ArchCode& arch, double value);
  bool contains(const ArchCode& arch) const { return index_.contains(arch); }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  /// Best (lowest) value; throws on an empty history.
  double best() const;
  const Entry& best_entry() const;
  /// Entries sorted by value, ties by evaluation order.
  std::vector<Entry> ranked() const;
  std::vector<Observation> observations() const;

  /// Lines `<arch><TAB><value>`; repeated codes are merged.
  static SearchHistory load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<Entry> entries_;
  std::map<ArchCode, std::size_t> index_;
};

void append_history_line(const std::filesystem::path& path, const ArchCode& arch, double value);

struct ProposeOptions {
  std::size_t pool_size = 10000;
  double mutation_rate = 0.1;
  std::size_t num_parents = 10;
  /// Mutants per parent; 0 means pool_size / num_parents.
  std::size_t mutants_per_parent = 0;
};

/// Top-n2 codes of the candidate pool by PoF against the best history value.
/// Ties in PoF are broken by the standardized margin, then by code order.
/// Throws ConfigError if fewer than n2 distinct new codes are in the pool.
std::vector<ArchCode> propose(const GPModel& gp, const SearchHistory& history, const SearchSpace& space,
                              std::size_t n2, std::uint64_t seed, const ProposeOptions& opts = {});

struct BoOptions {
  std::size_t init_count = 1200;
  std::size_t iterations = 100;
  std::size_t batch_size = 64;
  ProposeOptions propose;
  GpBounds bounds;
  std::uint64_t seed = 0;
};

/// Evaluates a batch of codes; results are in the same order.
using BatchObjective = std::function<std::vector<double>(std::span<const ArchCode>)>;
/// Called after each batch is recorded; iteration 0 is the initial random batch.
/// Returning true stops the loop.
using BatchCallback =
    std::function<bool(std::size_t iteration, std::span<const ArchCode> archs, std::span<const double> values)>;

/// Random initialisation followed by fit / propose / evaluate iterations.
/// A non-empty history resumes: initial samples already present are skipped
/// and iteration numbering continues from (size - init_count) / batch_size.
void run_bo(SearchHistory& history, const SearchSpace& space, const BatchObjective& objective,
            const BoOptions& opts, const BatchCallback& on_batch = {});

/// The first `count` distinct uniform codes of the stream seeded with `seed`.
std::vector<ArchCode> initial_samples(const SearchSpace& space, std::size_t count, std::uint64_t seed);

}  // namespace speechnas
