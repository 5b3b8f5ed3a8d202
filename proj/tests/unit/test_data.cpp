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
#include <map>
#include <random>
#include <set>

#include "speechnas/data.hpp"
#include "speechnas/errors.hpp"

using namespace speechnas;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SynthSpec small_spec() {
  SynthSpec s;
  s.num_speakers = 6;
  s.utts_per_speaker = 5;
  s.val_per_speaker = 2;
  s.feature_dim = 8;
  s.t_min = 20;
  s.t_max = 40;
  s.seed = 3;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

std::string format_error(const fs::path& p) {
  try {
    read_features(p);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

std::vector<double> mean_frame(const NdArray& f) {
  std::vector<double> m(f.dim(1), 0.0);
  for (std::size_t t = 0; t < f.dim(0); ++t)
    for (std::size_t c = 0; c < f.dim(1); ++c) m[c] += f[t * f.dim(1) + c] / static_cast<double>(f.dim(0));
  return m;
}

}  // namespace

TEST_CASE("feature file round trip and errors") {
  TempDir dir("speechnas_test_feats");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0.0, 1.0);
  NdArray f({7, 3});
  for (auto& v : f.data()) v = round_f32(z(rng));
  write_features(dir.path / "a.snf", f);
  CHECK(read_features(dir.path / "a.snf") == f);
  const std::string bytes = slurp(dir.path / "a.snf");
  CHECK(bytes.size() == 12 + 7 * 3 * 4);

  std::string bad = bytes;
  bad[0] = 'X';
  spit(dir.path / "magic.snf", bad);
  CHECK(format_error(dir.path / "magic.snf").find("offset 0") != std::string::npos);

  spit(dir.path / "short.snf", bytes.substr(0, 30));
  CHECK_FALSE(format_error(dir.path / "short.snf").empty());
  spit(dir.path / "header.snf", bytes.substr(0, 6));
  CHECK_FALSE(format_error(dir.path / "header.snf").empty());

  std::string zero = bytes.substr(0, 12);
  zero[4] = zero[5] = zero[6] = zero[7] = 0;
  spit(dir.path / "zero.snf", zero);
  CHECK(format_error(dir.path / "zero.snf").find("offset 4") != std::string::npos);

  spit(dir.path / "trailing.snf", bytes + "x");
  CHECK_FALSE(format_error(dir.path / "trailing.snf").empty());
  CHECK_THROWS(read_features(dir.path / "missing.snf"));
}

TEST_CASE("generation layout and determinism") {
  TempDir a("speechnas_test_gen_a"), b("speechnas_test_gen_b");
  const SynthSpec spec = small_spec();
  const GeneratedData ga = generate(spec, a.path);
  generate(spec, b.path);
  const auto entries = read_manifest(ga.manifest);
  CHECK(entries.size() == 30);
  for (const auto& e : entries) CHECK(slurp(a.path / e.path) == slurp(b.path / e.path));

  const auto train = load_utterances(ga.train_manifest);
  const auto val = load_utterances(ga.val_manifest);
  CHECK(train.size() == 18);
  CHECK(val.size() == 12);
  std::set<std::string> train_ids, val_ids;
  for (const auto& u : train) {
    train_ids.insert(u.id);
    CHECK(u.features.dim(0) >= spec.t_min);
    CHECK(u.features.dim(0) <= spec.t_max);
    CHECK(u.features.dim(1) == spec.feature_dim);
  }
  for (const auto& u : val) {
    val_ids.insert(u.id);
    CHECK_FALSE(train_ids.contains(u.id));
  }
  const TrialSet trials = read_trials(ga.trials);
  CHECK(trials.num_target() == trials.num_nontarget());
  CHECK(trials.num_target() == 6);  // C(2,2) per speaker
  for (const auto& t : trials.trials) {
    CHECK(val_ids.contains(t.enroll));
    CHECK(val_ids.contains(t.test));
  }

  SynthSpec other = spec;
  other.seed = 4;
  TempDir c("speechnas_test_gen_c");
  generate(other, c.path);
  CHECK(slurp(a.path / entries[0].path) != slurp(c.path / entries[0].path));

  SynthSpec bad = spec;
  bad.t_min = 1;
  CHECK_THROWS_AS(bad.check(), ConfigError);
  bad = spec;
  bad.val_per_speaker = 5;
  CHECK_THROWS_AS(bad.check(), ConfigError);
  bad = spec;
  bad.num_speakers = 1;
  CHECK_THROWS_AS(bad.check(), ConfigError);
}

TEST_CASE("default spec trial balance") {
  TempDir dir("speechnas_test_gen_default");
  SynthSpec spec;
  spec.t_min = 3;
  spec.t_max = 4;
  const GeneratedData g = generate(spec, dir.path);
  const TrialSet trials = read_trials(g.trials);
  CHECK(trials.num_target() == trials.num_nontarget());
  CHECK(trials.num_target() == 32 * 10);
}

TEST_CASE("noise-free generator") {
  TempDir dir("speechnas_test_gen_clean");
  SynthSpec spec = small_spec();
  spec.noise = 0.0;
  spec.scale = 2.0;
  const GeneratedData g = generate(spec, dir.path);
  const NdArray protos = speaker_prototypes(spec);
  const auto utts = load_utterances(g.manifest);
  int correct = 0;
  for (const auto& u : utts) {
    const std::size_t F = spec.feature_dim;
    for (std::size_t t = 0; t < u.features.dim(0); ++t) {
      for (std::size_t c = 0; c < F; ++c) {
        CHECK(u.features[t * F + c] == doctest::Approx(spec.scale * protos[static_cast<std::size_t>(u.speaker) * F + c]).epsilon(1e-6));
      }
    }
    const auto m = mean_frame(u.features);
    std::size_t best = 0;
    double best_score = -2.0;
    for (std::size_t s = 0; s < spec.num_speakers; ++s) {
      const std::vector<double> p(protos.raw() + s * F, protos.raw() + (s + 1) * F);
      const double score = cosine_score(m, p);
      if (score > best_score) {
        best_score = score;
        best = s;
      }
    }
    correct += static_cast<int>(best) == u.speaker;
  }
  CHECK(correct == static_cast<int>(utts.size()));
}

TEST_CASE("speakers are separable on mean frames") {
  TempDir dir("speechnas_test_gen_sep");
  SynthSpec spec = small_spec();
  spec.noise = 0.5;
  const auto utts = load_utterances(generate(spec, dir.path).manifest);
  double within = 0.0, across = 0.0;
  int nw = 0, na = 0;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    for (std::size_t j = i + 1; j < utts.size(); ++j) {
      const double s = cosine_score(mean_frame(utts[i].features), mean_frame(utts[j].features));
      if (utts[i].speaker == utts[j].speaker) {
        within += s;
        ++nw;
      } else {
        across += s;
        ++na;
      }
    }
  }
  CHECK(within / nw > across / na + 0.2);
}

TEST_CASE("cropping") {
  std::mt19937_64 rng(5);
  NdArray f({1000, 2});
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<double>(i);
  for (int n = 0; n < 50; ++n) {
    const NdArray c = crop(f, 200, 400, rng);
    CHECK(c.dim(0) >= 200);
    CHECK(c.dim(0) <= 400);
    const std::size_t start = static_cast<std::size_t>(c[0]) / 2;
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == f[start * 2 + i]);
  }
  NdArray s({50, 2});
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<double>(i);
  const NdArray padded = crop(s, 200, 400, rng);
  REQUIRE(padded.dim(0) == 200);
  for (std::size_t t = 0; t < 200; ++t) {
    CHECK(padded[t * 2] == s[(t % 50) * 2]);
    CHECK(padded[t * 2 + 1] == s[(t % 50) * 2 + 1]);
  }
  CHECK(crop_to(f, 300, rng).dim(0) == 300);
  CHECK(crop_to(s, 120, rng).dim(0) == 120);

  std::vector<Utterance> utts = {{"a", f, 0}, {"b", s, 1}};
  const std::vector<std::size_t> idx = {1, 0, 1};
  const NdArray batch = make_batch(utts, idx, 64, rng);
  CHECK(batch.shape() == Shape{3, 64, 2});

  std::mt19937_64 r1(9), r2(9);
  CHECK(crop(f, 200, 400, r1) == crop(f, 200, 400, r2));
}

TEST_CASE("trial construction") {
  std::vector<Utterance> utts;
  for (int s = 0; s < 4; ++s)
    for (int k = 0; k < 3; ++k) utts.push_back({"s" + std::to_string(s) + "u" + std::to_string(k), NdArray({2, 1}), s});
  const TrialSet t = make_trials(utts, 1);
  CHECK(t.num_target() == 12);
  CHECK(t.num_nontarget() == 12);
  std::map<std::string, int> spk;
  for (const auto& u : utts) spk[u.id] = u.speaker;
  for (const auto& tr : t.trials) CHECK((spk[tr.enroll] == spk[tr.test]) == tr.target);
  const TrialSet again = make_trials(utts, 1);
  REQUIRE(again.trials.size() == t.trials.size());
  for (std::size_t i = 0; i < t.trials.size(); ++i) CHECK(again.trials[i].test == t.trials[i].test);
}

TEST_CASE("manifest io") {
  TempDir dir("speechnas_test_manifest");
  const std::vector<ManifestEntry> entries = {{"feats/a.snf", 0, "a"}, {"feats/b.snf", 3, "b"}};
  write_manifest(dir.path / "m.tsv", entries);
  const auto back = read_manifest(dir.path / "m.tsv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].path == "feats/b.snf");
  CHECK(back[1].speaker == 3);
  CHECK(back[1].utterance_id == "b");
  spit(dir.path / "bad.tsv", "feats/a.snf\tx\ta\n");
  CHECK_THROWS_AS(read_manifest(dir.path / "bad.tsv"), FormatError);
  spit(dir.path / "empty.tsv", "");
  CHECK_THROWS(load_utterances(dir.path / "empty.tsv"));
}
