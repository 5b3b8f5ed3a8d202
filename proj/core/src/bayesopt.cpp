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

#include "speechnas/bayesopt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "speechnas/errors.hpp"

namespace speechnas {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Eigen::MatrixXd hamming_matrix(std::span<const Observation> obs) {
  const auto n = static_cast<Eigen::Index>(obs.size());
  Eigen::MatrixXd h(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    h(i, i) = 0.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double d = hamming_distance(obs[static_cast<std::size_t>(i)].arch, obs[static_cast<std::size_t>(j)].arch);
      h(i, j) = d;
      h(j, i) = d;
    }
  }
  return h;
}

Eigen::VectorXd targets(std::span<const Observation> obs) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) y(static_cast<Eigen::Index>(i)) = obs[i].value;
  return y;
}

/// Cholesky of m + jitter I with jitter escalating 0, 1e-10, ..., 1e-6.
Eigen::LLT<Eigen::MatrixXd> robust_llt(const Eigen::MatrixXd& m, double& jitter_used) {
  const auto n = m.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) {
    jitter_used = 0.0;
    return llt;
  }
  for (double jitter = 1e-10; jitter <= 1e-6 * 1.0001; jitter *= 10.0) {
    llt.compute(m + jitter * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() == Eigen::Success) {
      jitter_used = jitter;
      return llt;
    }
  }
  throw NumericError("GP: Cholesky failed after jitter escalation to 1e-6 (n=" + std::to_string(n) + ")");
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& h, const GpHyper& hp) {
  Eigen::MatrixXd k = hp.signal_var * (-hp.gamma * h.array()).exp().matrix();
  k.diagonal().array() += hp.noise_var;
  return k;
}

double exact_lml(const Eigen::MatrixXd& h, const Eigen::VectorXd& y, const GpHyper& hp) {
  double jitter = 0.0;
  const auto llt = robust_llt(covariance(h, hp), jitter);
  const Eigen::VectorXd r = y.array() - hp.mean;
  const double quad = r.dot(llt.solve(r));
  return -0.5 * quad - 0.5 * log_det(llt) - 0.5 * static_cast<double>(y.size()) * kLog2Pi;
}

struct Profiled {
  GpHyper hyper;
  double lml;
};

Profiled profile_impl(const Eigen::MatrixXd& h, const Eigen::VectorXd& y, double gamma, double ratio,
                      const GpBounds& b) {
  const auto n = y.size();
  Eigen::MatrixXd a = (-gamma * h.array()).exp().matrix();
  a.diagonal().array() += ratio;
  double jitter = 0.0;
  const auto llt = robust_llt(a, jitter);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  const Eigen::VectorXd ainv_one = llt.solve(ones);
  const Eigen::VectorXd ainv_y = llt.solve(y);
  GpHyper hp;
  hp.gamma = gamma;
  hp.mean = ones.dot(ainv_y) / ones.dot(ainv_one);
  const Eigen::VectorXd r = y.array() - hp.mean;
  const double quad = r.dot(llt.solve(r));
  const double sf_raw = quad / static_cast<double>(n);
  hp.signal_var = std::clamp(sf_raw, b.signal_var_min, b.signal_var_max);
  const double nv_raw = ratio * hp.signal_var;
  hp.noise_var = std::clamp(nv_raw, b.noise_var_min, b.noise_var_max);
  if (jitter == 0.0 && nv_raw == hp.noise_var) {
    // K = signal_var * A exactly, so reuse A's factorization.
    const double lml = -0.5 * quad / hp.signal_var -
                       0.5 * (static_cast<double>(n) * std::log(hp.signal_var) + log_det(llt)) -
                       0.5 * static_cast<double>(n) * kLog2Pi;
    return {hp, lml};
  }
  return {hp, exact_lml(h, y, hp)};
}

std::vector<double> log_grid(double lo, double hi, std::size_t steps) {
  std::vector<double> out;
  if (steps <= 1) {
    out.push_back(std::sqrt(lo * hi));
    return out;
  }
  const double l0 = std::log(lo), l1 = std::log(hi);
  for (std::size_t i = 0; i < steps; ++i) {
    out.push_back(std::exp(l0 + (l1 - l0) * static_cast<double>(i) / static_cast<double>(steps - 1)));
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

double kernel(const ArchCode& a1, const ArchCode& a2, double gamma, double signal_var) {
  if (!(gamma > 0.0)) throw ConfigError("kernel: gamma must be positive");
  return signal_var * std::exp(-gamma * hamming_distance(a1, a2));
}

Eigen::MatrixXd kernel_matrix(std::span<const ArchCode> codes, double gamma, double signal_var) {
  const auto n = static_cast<Eigen::Index>(codes.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v =
          kernel(codes[static_cast<std::size_t>(i)], codes[static_cast<std::size_t>(j)], gamma, signal_var);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

GPModel GPModel::condition(std::vector<Observation> obs, const GpHyper& hyper) {
  if (obs.empty()) throw ConfigError("GP: no observations");
  if (!(hyper.gamma > 0.0) || !(hyper.signal_var > 0.0) || !(hyper.noise_var >= 0.0)) {
    throw ConfigError("GP: hyper-parameters must be positive");
  }
  GPModel m;
  m.obs_ = std::move(obs);
  m.hyper_ = hyper;
  m.factorize();
  return m;
}

void GPModel::factorize() {
  const Eigen::MatrixXd h = hamming_matrix(obs_);
  const Eigen::VectorXd y = targets(obs_);
  llt_ = robust_llt(covariance(h, hyper_), jitter_);
  const Eigen::VectorXd r = y.array() - hyper_.mean;
  alpha_ = llt_.solve(r);
  lml_ = -0.5 * r.dot(alpha_) - 0.5 * log_det(llt_) - 0.5 * static_cast<double>(y.size()) * kLog2Pi;
  fitted_ = true;
}

double GPModel::log_marginal_likelihood(std::span<const Observation> obs, const GpHyper& hyper) {
  return exact_lml(hamming_matrix(obs), targets(obs), hyper);
}

GpHyper GPModel::profile(std::span<const Observation> obs, double gamma, double ratio, const GpBounds& bounds) {
  return profile_impl(hamming_matrix(obs), targets(obs), gamma, ratio, bounds).hyper;
}

std::vector<std::pair<double, double>> GPModel::grid(const GpBounds& b) {
  std::vector<std::pair<double, double>> out;
  for (double g : log_grid(b.gamma_min, b.gamma_max, b.gamma_steps)) {
    for (double r : log_grid(b.ratio_min, b.ratio_max, b.ratio_steps)) out.emplace_back(g, r);
  }
  return out;
}

GPModel GPModel::fit(std::vector<Observation> obs, const GpBounds& bounds) {
  if (obs.size() < 2) throw ConfigError("GP fit needs at least 2 observations");
  for (const auto& o : obs) {
    if (!std::isfinite(o.value)) throw NumericError("GP fit: non-finite observation for " + o.arch.to_string());
  }
  const Eigen::MatrixXd h = hamming_matrix(obs);
  const Eigen::VectorXd y = targets(obs);

  double best_lg = 0.0, best_lr = 0.0;
  Profiled best{{}, -std::numeric_limits<double>::infinity()};
  for (const auto& [g, r] : grid(bounds)) {
    const Profiled p = profile_impl(h, y, g, r, bounds);
    if (p.lml > best.lml) {
      best = p;
      best_lg = std::log(g);
      best_lr = std::log(r);
    }
  }

  // Pattern search in (log gamma, log ratio) around the best grid point.
  const double lg_lo = std::log(bounds.gamma_min), lg_hi = std::log(bounds.gamma_max);
  const double lr_lo = std::log(bounds.ratio_min), lr_hi = std::log(bounds.ratio_max);
  double step_g = bounds.gamma_steps > 1 ? 0.5 * (lg_hi - lg_lo) / static_cast<double>(bounds.gamma_steps - 1) : 0.5;
  double step_r = bounds.ratio_steps > 1 ? 0.5 * (lr_hi - lr_lo) / static_cast<double>(bounds.ratio_steps - 1) : 0.5;
  for (std::size_t it = 0; it < bounds.refine_iters; ++it) {
    bool improved = false;
    const double moves[4][2] = {{step_g, 0.0}, {-step_g, 0.0}, {0.0, step_r}, {0.0, -step_r}};
    for (const auto& mv : moves) {
      const double lg = std::clamp(best_lg + mv[0], lg_lo, lg_hi);
      const double lr = std::clamp(best_lr + mv[1], lr_lo, lr_hi);
      if (lg == best_lg && lr == best_lr) continue;
      const Profiled p = profile_impl(h, y, std::exp(lg), std::exp(lr), bounds);
      if (p.lml > best.lml) {
        best = p;
        best_lg = lg;
        best_lr = lr;
        improved = true;
      }
    }
    if (!improved) {
      step_g *= 0.5;
      step_r *= 0.5;
    }
  }

  GPModel m = condition(std::move(obs), best.hyper);
  return m;
}

GPModel::Prediction GPModel::posterior(const ArchCode& arch) const {
  return posterior(std::span<const ArchCode>(&arch, 1)).front();
}

std::vector<GPModel::Prediction> GPModel::posterior(std::span<const ArchCode> archs) const {
  if (!fitted_) throw ConfigError("GP posterior requested from an unfitted model");
  const auto n = static_cast<Eigen::Index>(obs_.size());
  const auto m = static_cast<Eigen::Index>(archs.size());
  Eigen::MatrixXd ks(n, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      ks(i, j) = kernel(obs_[static_cast<std::size_t>(i)].arch, archs[static_cast<std::size_t>(j)], hyper_.gamma,
                        hyper_.signal_var);
    }
  }
  const Eigen::VectorXd mean = (ks.transpose() * alpha_).array() + hyper_.mean;
  llt_.matrixL().solveInPlace(ks);
  const Eigen::VectorXd reduction = ks.colwise().squaredNorm().transpose();
  std::vector<Prediction> out(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    const double var = hyper_.signal_var + hyper_.noise_var - reduction(j);
    out[static_cast<std::size_t>(j)] = {mean(j), std::sqrt(std::max(var, 0.0))};
  }
  return out;
}

double GPModel::pof(const ArchCode& arch, double tau) const {
  const Prediction p = posterior(arch);
  return speechnas::pof(p.mean, p.std, tau);
}

double pof(double mean, double std, double tau) {
  const double z = (tau - mean) / std::max(std, 1e-9);
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

double pof(const GPModel& gp, const ArchCode& arch, double tau) { return gp.pof(arch, tau); }

bool SearchHistory::add(const ArchCode& arch, double value) {
  if (auto it = index_.find(arch); it != index_.end()) {
    Entry& e = entries_[it->second];
    e.value = (e.value * static_cast<double>(e.count) + value) / static_cast<double>(e.count + 1);
    ++e.count;
    return false;
  }
  index_.emplace(arch, entries_.size());
  entries_.push_back({arch, value, 1});
  return true;
}

double SearchHistory::best() const { return best_entry().value; }

const SearchHistory::Entry& SearchHistory::best_entry() const {
  if (entries_.empty()) throw ConfigError("empty search history");
  return *std::min_element(entries_.begin(), entries_.end(),
                           [](const Entry& a, const Entry& b) { return a.value < b.value; });
}

std::vector<SearchHistory::Entry> SearchHistory::ranked() const {
  std::vector<Entry> out = entries_;
  std::stable_sort(out.begin(), out.end(), [](const Entry& a, const Entry& b) { return a.value < b.value; });
  return out;
}

std::vector<Observation> SearchHistory::observations() const {
  std::vector<Observation> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back({e.arch, e.value});
  return out;
}

SearchHistory SearchHistory::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open history file " + path.string());
  SearchHistory h;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected `<arch><TAB><value>`");
    }
    double value = 0.0;
    try {
      std::size_t used = 0;
      value = std::stod(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad value");
    }
    ArchCode arch;
    try {
      arch = ArchCode::parse(line.substr(0, tab));
    } catch (const Error& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    h.add(arch, value);
  }
  return h;
}

void SearchHistory::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write history file " + path.string());
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& e : entries_) os << e.arch.to_string() << '\t' << e.value << '\n';
}

void append_history_line(const std::filesystem::path& path, const ArchCode& arch, double value) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::app);
  if (!os) throw Error("cannot append to history file " + path.string());
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << arch.to_string() << '\t' << value << '\n';
}

std::vector<ArchCode> propose(const GPModel& gp, const SearchHistory& history, const SearchSpace& space,
                              std::size_t n2, std::uint64_t seed, const ProposeOptions& opts) {
  if (n2 == 0) throw ConfigError("propose: n2 must be at least 1");
  if (history.empty()) throw ConfigError("propose: empty history");
  std::mt19937_64 rng(seed);
  std::set<ArchCode> pool;
  for (std::size_t i = 0; i < opts.pool_size; ++i) pool.insert(sample_uniform(space, rng));
  const auto ranked = history.ranked();
  const std::size_t parents = std::min(opts.num_parents, ranked.size());
  const std::size_t per_parent =
      opts.mutants_per_parent > 0 ? opts.mutants_per_parent
                                  : (opts.num_parents > 0 ? opts.pool_size / opts.num_parents : 0);
  for (std::size_t p = 0; p < parents; ++p) {
    for (std::size_t k = 0; k < per_parent; ++k) pool.insert(mutate(ranked[p].arch, opts.mutation_rate, rng, space));
  }
  std::vector<ArchCode> candidates;
  candidates.reserve(pool.size());
  for (const auto& a : pool) {
    if (!history.contains(a)) candidates.push_back(a);
  }
  if (candidates.size() < n2) {
    throw ConfigError("propose: pool exhausted, " + std::to_string(candidates.size()) +
                      " distinct new candidates for n2=" + std::to_string(n2));
  }

  const double tau = history.best();
  const auto pred = gp.posterior(candidates);
  struct Scored {
    double pof;
    double z;
    std::size_t index;
  };
  std::vector<Scored> scored(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double z = (tau - pred[i].mean) / std::max(pred[i].std, 1e-9);
    scored[i] = {pof(pred[i].mean, pred[i].std, tau), z, i};
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n2), scored.end(),
                    [&](const Scored& a, const Scored& b) {
                      if (a.pof != b.pof) return a.pof > b.pof;
                      if (a.z != b.z) return a.z > b.z;
                      return candidates[a.index] < candidates[b.index];
                    });
  std::vector<ArchCode> out;
  out.reserve(n2);
  for (std::size_t i = 0; i < n2; ++i) out.push_back(candidates[scored[i].index]);
  return out;
}

std::vector<ArchCode> initial_samples(const SearchSpace& space, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0));
  std::set<ArchCode> seen;
  std::vector<ArchCode> out;
  out.reserve(count);
  std::size_t attempts = 0;
  const std::size_t max_attempts = 100 * count + 1000;
  while (out.size() < count) {
    if (++attempts > max_attempts) {
      throw ConfigError("cannot draw " + std::to_string(count) + " distinct architectures from space of size " +
                        space.size_string());
    }
    ArchCode a = sample_uniform(space, rng);
    if (seen.insert(a).second) out.push_back(std::move(a));
  }
  return out;
}

void run_bo(SearchHistory& history, const SearchSpace& space, const BatchObjective& objective,
            const BoOptions& opts, const BatchCallback& on_batch) {
  if (opts.batch_size == 0) throw ConfigError("search batch size must be at least 1");
  for (const auto& e : history.entries()) require_valid(e.arch, space);

  if (history.size() < opts.init_count) {
    std::vector<ArchCode> todo;
    for (auto& a : initial_samples(space, opts.init_count, opts.seed)) {
      if (!history.contains(a)) todo.push_back(std::move(a));
    }
    todo.resize(std::min(todo.size(), opts.init_count - history.size()));
    if (!todo.empty()) {
      const auto values = objective(todo);
      if (values.size() != todo.size()) throw Error("objective returned the wrong number of values");
      for (std::size_t i = 0; i < todo.size(); ++i) history.add(todo[i], values[i]);
      if (on_batch && on_batch(0, todo, values)) return;
    }
  }
  if (history.size() < 2) throw ConfigError("search needs at least 2 initial evaluations");

  const std::size_t done = (history.size() - std::min(history.size(), opts.init_count)) / opts.batch_size;
  for (std::size_t it = done; it < opts.iterations; ++it) {
    const GPModel gp = GPModel::fit(history.observations(), opts.bounds);
    const auto batch = propose(gp, history, space, opts.batch_size, mix_seed(opts.seed, it + 1), opts.propose);
    const auto values = objective(batch);
    if (values.size() != batch.size()) throw Error("objective returned the wrong number of values");
    for (std::size_t i = 0; i < batch.size(); ++i) history.add(batch[i], values[i]);
    if (on_batch && on_batch(it + 1, batch, values)) return;
  }
}

}  // namespace speechnas
