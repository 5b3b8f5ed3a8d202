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
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace speechnas {

/// <e1, e2> / (|e1| |e2|) with norms floored at 1e-12.
double cosine_score(std::span<const double> e1, std::span<const double> e2);

enum class EerMethod {
  Interpolated,  // linear interpolation between the sweep points around the crossing
  NearestMax,    // max(FAR, FRR) at the sweep point where they are closest
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

/// One operating point of the threshold sweep. A trial is accepted when score >= threshold.
struct SweepPoint {
  double threshold;
  double frr;  // fraction of target scores below threshold
  double far;  // fraction of nontarget scores at or above threshold
};

/// Operating points at every distinct score, plus +inf (reject all).
/// labels: 1 = target, 0 = nontarget. Throws unless both classes are present.
std::vector<SweepPoint> threshold_sweep(std::span<const double> scores, std::span<const int> labels);

EerResult eer(std::span<const double> scores, std::span<const int> labels,
              EerMethod method = EerMethod::Interpolated);

struct DcfResult {
  double normalized = 0.0;  // divided by min(c_miss p, c_fa (1 - p))
  double raw = 0.0;
  double threshold = 0.0;
};

/// Minimum over the sweep of c_miss p P_miss + c_fa (1 - p) P_fa.
DcfResult min_dcf_detail(std::span<const double> scores, std::span<const int> labels, double p_target,
                         double c_miss = 1.0, double c_fa = 1.0);
double min_dcf(std::span<const double> scores, std::span<const int> labels, double p_target, bool normalize = true);

/// Detection cost at one fixed threshold.
double dcf_at(std::span<const double> scores, std::span<const int> labels, double threshold, double p_target,
              bool normalize = true);

// ---------------------------------------------------------------------------
// Trials

struct Trial {
  std::string enroll;
  std::string test;
  bool target = false;
};

struct TrialSet {
  std::vector<Trial> trials;
  std::optional<std::vector<double>> scores;

  std::size_t num_target() const;
  std::size_t num_nontarget() const;
  std::vector<int> labels() const;
};

/// `enroll<TAB>test<TAB>{1|0}` per line; a fourth float column is read as the score.
TrialSet read_trials(const std::filesystem::path& path);
void write_trials(const TrialSet& set, const std::filesystem::path& path);

struct MetricReport {
  double eer = 0.0;
  double threshold = 0.0;
  double dcf_01 = 0.0;
  double dcf_001 = 0.0;
  double dcf_01_raw = 0.0;
  double dcf_001_raw = 0.0;
  std::size_t num_target = 0;
  std::size_t num_nontarget = 0;
};

MetricReport evaluate_scores(std::span<const double> scores, std::span<const int> labels);
/// `key = value` lines.
std::string format_report(const MetricReport& report);

}  // namespace speechnas
