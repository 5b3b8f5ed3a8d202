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

#include "speechnas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "speechnas/errors.hpp"

namespace speechnas {

double cosine_score(std::span<const double> e1, std::span<const double> e2) {
  if (e1.size() != e2.size()) {
    throw ShapeError("cosine_score: dimension mismatch " + std::to_string(e1.size()) + " vs " +
                     std::to_string(e2.size()));
  }
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < e1.size(); ++i) {
    m1 = std::max(m1, std::abs(e1[i]));
    m2 = std::max(m2, std::abs(e2[i]));
  }
  if (m1 == 0.0 || m2 == 0.0) return 0.0;
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < e1.size(); ++i) {
    const double a = e1[i] / m1, b = e2[i] / m2;
    dot += a * b;
    n1 += a * a;
    n2 += b * b;
  }
  const double s = dot * (m1 / std::max(m1 * std::sqrt(n1), 1e-12)) * (m2 / std::max(m2 * std::sqrt(n2), 1e-12));
  return std::clamp(s, -1.0, 1.0);
}

std::vector<SweepPoint> threshold_sweep(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
  std::size_t nt = 0, nn = 0;
  for (int l : labels) (l ? nt : nn)++;
  if (nt == 0 || nn == 0) throw ConfigError("EER/DCF need both target and nontarget trials");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::vector<SweepPoint> sweep;
  sweep.reserve(scores.size() + 1);
  std::size_t targets_below = 0, nontargets_below = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = scores[order[i]];
    sweep.push_back({t, static_cast<double>(targets_below) / static_cast<double>(nt),
                     static_cast<double>(nn - nontargets_below) / static_cast<double>(nn)});
    while (i < order.size() && scores[order[i]] == t) {
      (labels[order[i]] ? targets_below : nontargets_below)++;
      ++i;
    }
  }
  sweep.push_back({std::numeric_limits<double>::infinity(), 1.0, 0.0});
  return sweep;
}

EerResult eer(std::span<const double> scores, std::span<const int> labels, EerMethod method) {
  const auto sweep = threshold_sweep(scores, labels);
  if (method == EerMethod::NearestMax) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < sweep.size(); ++k) {
      if (std::abs(sweep[k].frr - sweep[k].far) < std::abs(sweep[best].frr - sweep[best].far)) best = k;
    }
    const double thr = std::isinf(sweep[best].threshold) && best > 0 ? sweep[best - 1].threshold : sweep[best].threshold;
    return {std::max(sweep[best].frr, sweep[best].far), thr};
  }
  // FRR - FAR is non-decreasing along the sweep, from <= -0 at the lowest score to 1 at +inf.
  for (std::size_t k = 0; k < sweep.size(); ++k) {
    const double d = sweep[k].frr - sweep[k].far;
    if (d < 0.0) continue;
    if (d == 0.0 || k == 0) {
      const double thr = std::isinf(sweep[k].threshold) && k > 0 ? sweep[k - 1].threshold : sweep[k].threshold;
      return {sweep[k].frr, thr};
    }
    const SweepPoint& lo = sweep[k - 1];
    const SweepPoint& hi = sweep[k];
    const double dlo = lo.frr - lo.far;
    const double alpha = -dlo / (d - dlo);
    const double e = lo.frr + alpha * (hi.frr - lo.frr);
    const double thr = std::isinf(hi.threshold) ? lo.threshold : lo.threshold + alpha * (hi.threshold - lo.threshold);
    return {e, thr};
  }
  return {1.0, sweep.back().threshold};
}

DcfResult min_dcf_detail(std::span<const double> scores, std::span<const int> labels, double p_target,
                         double c_miss, double c_fa) {
  if (!(p_target > 0.0 && p_target < 1.0)) throw ConfigError("p_target must be in (0,1)");
  const auto sweep = threshold_sweep(scores, labels);
  const double norm = std::min(c_miss * p_target, c_fa * (1.0 - p_target));
  DcfResult best;
  best.raw = std::numeric_limits<double>::infinity();
  for (const auto& pt : sweep) {
    const double cost = c_miss * p_target * pt.frr + c_fa * (1.0 - p_target) * pt.far;
    if (cost < best.raw) {
      best.raw = cost;
      best.threshold = pt.threshold;
    }
  }
  best.normalized = best.raw / norm;
  return best;
}

double min_dcf(std::span<const double> scores, std::span<const int> labels, double p_target, bool normalize) {
  const DcfResult r = min_dcf_detail(scores, labels, p_target);
  return normalize ? r.normalized : r.raw;
}

double dcf_at(std::span<const double> scores, std::span<const int> labels, double threshold, double p_target,
              bool normalize) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
  std::size_t nt = 0, nn = 0, miss = 0, fa = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i]) {
      ++nt;
      if (scores[i] < threshold) ++miss;
    } else {
      ++nn;
      if (scores[i] >= threshold) ++fa;
    }
  }
  if (nt == 0 || nn == 0) throw ConfigError("EER/DCF need both target and nontarget trials");
  const double cost = p_target * static_cast<double>(miss) / static_cast<double>(nt) +
                      (1.0 - p_target) * static_cast<double>(fa) / static_cast<double>(nn);
  return normalize ? cost / std::min(p_target, 1.0 - p_target) : cost;
}

std::size_t TrialSet::num_target() const {
  return static_cast<std::size_t>(std::count_if(trials.begin(), trials.end(), [](const Trial& t) { return t.target; }));
}

std::size_t TrialSet::num_nontarget() const { return trials.size() - num_target(); }

std::vector<int> TrialSet::labels() const {
  std::vector<int> out;
  out.reserve(trials.size());
  for (const auto& t : trials) out.push_back(t.target ? 1 : 0);
  return out;
}

TrialSet read_trials(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open trial file " + path.string());
  TrialSet set;
  std::vector<double> scores;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 3 && cols.size() != 4) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 3 or 4 tab-separated columns");
    }
    if (cols[2] != "1" && cols[2] != "0") {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": label must be 1 or 0");
    }
    set.trials.push_back({cols[0], cols[1], cols[2] == "1"});
    if (cols.size() == 4) {
      try {
        scores.push_back(std::stod(cols[3]));
      } catch (const std::exception&) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad score");
      }
    }
  }
  if (!scores.empty()) {
    if (scores.size() != set.trials.size()) throw FormatError(path.string() + ": score column on some lines only");
    set.scores = std::move(scores);
  }
  return set;
}

void write_trials(const TrialSet& set, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write trial file " + path.string());
  os << std::setprecision(9);
  for (std::size_t i = 0; i < set.trials.size(); ++i) {
    const Trial& t = set.trials[i];
    os << t.enroll << '\t' << t.test << '\t' << (t.target ? 1 : 0);
    if (set.scores) os << '\t' << (*set.scores)[i];
    os << '\n';
  }
}

MetricReport evaluate_scores(std::span<const double> scores, std::span<const int> labels) {
  MetricReport r;
  const EerResult e = eer(scores, labels);
  r.eer = e.eer;
  r.threshold = e.threshold;
  const DcfResult d1 = min_dcf_detail(scores, labels, 0.01);
  const DcfResult d2 = min_dcf_detail(scores, labels, 0.001);
  r.dcf_01 = d1.normalized;
  r.dcf_01_raw = d1.raw;
  r.dcf_001 = d2.normalized;
  r.dcf_001_raw = d2.raw;
  for (int l : labels) (l ? r.num_target : r.num_nontarget)++;
  return r;
}

std::string format_report(const MetricReport& r) {
  std::ostringstream os;
  os << std::setprecision(8);
  os << "eer = " << r.eer << '\n'
     << "threshold = " << r.threshold << '\n'
     << "dcf_0.01 = " << r.dcf_01 << '\n'
     << "dcf_0.001 = " << r.dcf_001 << '\n'
     << "dcf_0.01_raw = " << r.dcf_01_raw << '\n'
     << "dcf_0.001_raw = " << r.dcf_001_raw << '\n'
     << "num_target = " << r.num_target << '\n'
     << "num_nontarget = " << r.num_nontarget << '\n';
  return os.str();
}

}  // namespace speechnas
