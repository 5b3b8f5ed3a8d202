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

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "metric_oracle.hpp"
#include "speechnas/errors.hpp"
#include "speechnas/metrics.hpp"

using namespace speechnas;
using namespace speechnas::testing;

TEST_CASE("cosine score") {
  const std::vector<double> a = {1.0, 0.0}, b = {1.0, 1.0}, c = {0.0, 2.0}, z = {0.0, 0.0};
  CHECK(cosine_score(b, b) == doctest::Approx(1.0));
  CHECK(cosine_score(a, c) == 0.0);
  CHECK(cosine_score(a, b) == doctest::Approx(std::sqrt(2.0) / 2.0));
  CHECK(std::isfinite(cosine_score(a, z)));
  const std::vector<double> big = {1e200, 1e200};
  CHECK(cosine_score(big, big) <= 1.0);
  const std::vector<double> three = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(cosine_score(a, three), ShapeError);
}

TEST_CASE("eer worked examples") {
  const std::vector<int> labels = {1, 1, 0, 0};
  const std::vector<double> perfect = {0.9, 0.8, 0.1, 0.2};
  CHECK(eer(perfect, labels).eer == 0.0);
  CHECK(min_dcf(perfect, labels, 0.01) == 0.0);
  const std::vector<double> crossing = {0.1, 0.9, 0.2, 0.8};
  const EerResult r = eer(crossing, labels);
  CHECK(r.eer == 0.5);
  CHECK(r.threshold > 0.2);
  CHECK(r.threshold <= 0.8);
  CHECK(eer(crossing, labels, EerMethod::NearestMax).eer == 0.5);

  const std::vector<double> same = {0.3, 0.3, 0.3, 0.3};
  CHECK(min_dcf(same, labels, 0.01) == doctest::Approx(oracle_min_dcf(same, labels, 0.01, true)));
  CHECK(min_dcf(same, labels, 0.01) == doctest::Approx(1.0));
  CHECK(min_dcf(same, labels, 0.01, false) == doctest::Approx(0.01));

  const std::vector<int> one_class = {1, 1};
  const std::vector<double> two = {0.1, 0.2};
  CHECK_THROWS(eer(two, one_class));
  CHECK_THROWS(min_dcf(two, one_class, 0.01));
  CHECK_THROWS(eer(two, labels));
}

TEST_CASE("exhaustive threshold oracle") {
  std::mt19937_64 rng(123);
  std::vector<double> s;
  std::vector<int> l;
  double worst_eer = 0.0, worst_dcf = 0.0;
  for (int n = 0; n < 200; ++n) {
    random_scores(rng, s, l);
    worst_eer = std::max(worst_eer, std::abs(eer(s, l).eer - oracle_eer(s, l)));
    for (double p : {0.01, 0.001}) {
      worst_dcf = std::max(worst_dcf, std::abs(min_dcf(s, l, p) - oracle_min_dcf(s, l, p, true)));
      worst_dcf = std::max(worst_dcf, std::abs(min_dcf(s, l, p, false) - oracle_min_dcf(s, l, p, false)));
    }
  }
  CHECK(worst_eer < 1e-9);
  CHECK(worst_dcf < 1e-9);
}

TEST_CASE("metric properties") {
  std::mt19937_64 rng(9);
  std::vector<double> s;
  std::vector<int> l;
  for (int n = 0; n < 50; ++n) {
    random_scores(rng, s, l);
    const EerResult base = eer(s, l);
    CHECK(base.eer >= 0.0);
    CHECK(base.eer <= 1.0);

    std::vector<double> mapped(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) mapped[i] = std::exp(s[i]) + s[i] * s[i] * s[i];
    CHECK(eer(mapped, l).eer == doctest::Approx(base.eer).epsilon(1e-12));
    CHECK(min_dcf(mapped, l, 0.01) == doctest::Approx(min_dcf(s, l, 0.01)).epsilon(1e-12));

    const double dcf = min_dcf(s, l, 0.01);
    CHECK(dcf <= dcf_at(s, l, base.threshold, 0.01, true) + 1e-12);

    std::vector<double> s2 = s;
    std::vector<int> l2 = l;
    s2.push_back(s[3 % s.size()]);
    l2.push_back(l[3 % l.size()]);
    std::size_t nt = 0;
    for (int v : l) nt += v;
    const double bound = 1.0 / static_cast<double>(std::min(nt, l.size() - nt));
    CHECK(std::abs(eer(s2, l2).eer - base.eer) <= bound + 1e-12);

    double gap = 2.0, nearest = 0.0;
    for (double t : oracle_thresholds(s)) {
      const auto [frr, far] = rates_at(s, l, t);
      if (std::abs(frr - far) < gap) {
        gap = std::abs(frr - far);
        nearest = std::max(frr, far);
      }
    }
    CHECK(eer(s, l, EerMethod::NearestMax).eer == nearest);
  }
}

TEST_CASE("label flip with negated scores") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int n = 0; n < 50; ++n) {
    std::vector<double> s(200);
    std::vector<int> l(200);
    for (std::size_t i = 0; i < 200; ++i) {
      l[i] = i % 3 == 0;
      s[i] = z(rng) + (l[i] ? 1.0 : 0.0);
    }
    std::vector<double> ns(200);
    std::vector<int> nl(200);
    for (std::size_t i = 0; i < 200; ++i) {
      ns[i] = -s[i];
      nl[i] = 1 - l[i];
    }
    CHECK(eer(ns, nl).eer == doctest::Approx(eer(s, l).eer).epsilon(1e-9));
  }
}

TEST_CASE("trial files and reports") {
  const auto dir = std::filesystem::temp_directory_path() / "speechnas_test_trials";
  std::filesystem::create_directories(dir);
  TrialSet set;
  set.trials = {{"a", "b", true}, {"a", "c", false}, {"b", "c", false}};
  CHECK(set.num_target() == 1);
  CHECK(set.num_nontarget() == 2);
  CHECK(set.labels() == std::vector<int>{1, 0, 0});
  write_trials(set, dir / "t.tsv");
  TrialSet back = read_trials(dir / "t.tsv");
  REQUIRE(back.trials.size() == 3);
  CHECK(back.trials[2].enroll == "b");
  CHECK_FALSE(back.trials[2].target);
  CHECK_FALSE(back.scores.has_value());

  set.scores = std::vector<double>{0.75, -0.125, 0.1};
  write_trials(set, dir / "s.tsv");
  back = read_trials(dir / "s.tsv");
  REQUIRE(back.scores.has_value());
  CHECK(*back.scores == *set.scores);

  {
    std::ofstream f(dir / "bad.tsv");
    f << "a\tb\t2\n";
  }
  CHECK_THROWS_AS(read_trials(dir / "bad.tsv"), FormatError);
  {
    std::ofstream f(dir / "short.tsv");
    f << "a\tb\n";
  }
  CHECK_THROWS_AS(read_trials(dir / "short.tsv"), FormatError);

  const MetricReport r = evaluate_scores(*set.scores, set.labels());
  CHECK(r.eer == 0.0);
  CHECK(r.num_target == 1);
  CHECK(r.num_nontarget == 2);
  const std::string text = format_report(r);
  CHECK(text.find("eer = ") != std::string::npos);
  CHECK(text.find("dcf_0.01 = ") != std::string::npos);
  CHECK(text.find("dcf_0.001 = ") != std::string::npos);
  CHECK(text.find("num_target = 1") != std::string::npos);
  std::filesystem::remove_all(dir);
}
