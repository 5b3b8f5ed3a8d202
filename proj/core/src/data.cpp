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

#include "speechnas/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "speechnas/errors.hpp"

namespace speechnas {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + static_cast<std::size_t>(i)])) << (8 * i);
  }
  return v;
}

std::string utt_name(std::size_t speaker, std::size_t utt) {
  std::ostringstream os;
  os << "spk" << std::setw(3) << std::setfill('0') << speaker << "-utt" << std::setw(3) << std::setfill('0') << utt;
  return os.str();
}

}  // namespace

void SynthSpec::check() const {
  if (num_speakers < 2) throw ConfigError("data.num_speakers must be at least 2");
  if (feature_dim == 0) throw ConfigError("data.feature_dim must be positive");
  if (t_min < 2) throw ConfigError("data.t_min must be at least 2");
  if (t_max < t_min) throw ConfigError("data.t_max must be >= data.t_min");
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("data.rho must be in [0,1)");
  if (!(noise >= 0.0)) throw ConfigError("data.noise must be non-negative");
  if (utts_per_speaker < 2) throw ConfigError("data.utts_per_speaker must be at least 2");
  if (val_per_speaker < 1 || val_per_speaker >= utts_per_speaker) {
    throw ConfigError("data.val_per_speaker must be in [1, utts_per_speaker)");
  }
}

NdArray speaker_prototypes(const SynthSpec& spec) {
  spec.check();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  NdArray protos({spec.num_speakers, spec.feature_dim}, DType::F64);
  for (std::size_t s = 0; s < spec.num_speakers; ++s) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t f = 0; f < spec.feature_dim; ++f) {
        const double v = normal(rng);
        protos[s * spec.feature_dim + f] = v;
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (std::size_t f = 0; f < spec.feature_dim; ++f) protos[s * spec.feature_dim + f] /= norm;
  }
  return protos;
}

GeneratedData generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.check();
  const NdArray protos = speaker_prototypes(spec);
  std::mt19937_64 rng(spec.seed ^ 0x5eed5eed5eed5eedULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> length(spec.t_min, spec.t_max);
  const std::size_t F = spec.feature_dim;

  std::filesystem::create_directories(out_dir / "feats");
  std::vector<ManifestEntry> all, train, val;
  std::vector<Utterance> val_utts;
  for (std::size_t s = 0; s < spec.num_speakers; ++s) {
    for (std::size_t u = 0; u < spec.utts_per_speaker; ++u) {
      const std::size_t T = length(rng);
      NdArray x({T, F}, DType::F32);
      std::vector<double> prev(F);
      for (std::size_t f = 0; f < F; ++f) prev[f] = spec.scale * protos[s * F + f];
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t f = 0; f < F; ++f) {
          const double centre = spec.scale * protos[s * F + f];
          const double v = centre + spec.rho * (prev[f] - centre) + spec.noise * normal(rng);
          prev[f] = v;
          x[t * F + f] = v;
        }
      }
      x.round_to_dtype();
      const std::string id = utt_name(s, u);
      const std::string rel = "feats/" + id + ".snf";
      write_features(out_dir / rel, x);
      ManifestEntry entry{rel, static_cast<int>(s), id};
      all.push_back(entry);
      if (u < spec.utts_per_speaker - spec.val_per_speaker) {
        train.push_back(entry);
      } else {
        val.push_back(entry);
        val_utts.push_back({id, NdArray(), static_cast<int>(s)});
      }
    }
  }
  GeneratedData out{out_dir / kManifestFile, out_dir / kTrainManifestFile, out_dir / kValManifestFile,
                    out_dir / kTrialsFile};
  write_manifest(out.manifest, all);
  write_manifest(out.train_manifest, train);
  write_manifest(out.val_manifest, val);
  write_trials(make_trials(val_utts, spec.seed + 1), out.trials);
  return out;
}

NdArray read_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open feature file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 4 || bytes.compare(0, 4, "SNF1") != 0) throw FormatError(where + "bad magic at offset 0");
  if (bytes.size() < 12) throw FormatError(where + "truncated header at offset " + std::to_string(bytes.size()));
  const std::uint32_t frames = get_u32(bytes, 4);
  const std::uint32_t channels = get_u32(bytes, 8);
  if (frames == 0) throw FormatError(where + "zero frame count at offset 4");
  if (channels == 0) throw FormatError(where + "zero channel count at offset 8");
  const std::size_t n = static_cast<std::size_t>(frames) * channels;
  const std::size_t expected = 12 + 4 * n;
  if (bytes.size() < expected) {
    throw FormatError(where + "truncated data at offset " + std::to_string(bytes.size()) + ", expected " +
                      std::to_string(expected) + " bytes");
  }
  if (bytes.size() > expected) throw FormatError(where + "trailing bytes at offset " + std::to_string(expected));
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float v = std::bit_cast<float>(get_u32(bytes, 12 + 4 * i));
    if (!std::isfinite(v)) throw FormatError(where + "non-finite value at offset " + std::to_string(12 + 4 * i));
    data[i] = v;
  }
  return NdArray({frames, channels}, std::move(data), DType::F32);
}

void write_features(const std::filesystem::path& path, const NdArray& features) {
  if (features.rank() != 2 || features.dim(0) == 0 || features.dim(1) == 0) {
    throw ShapeError("write_features expects a non-empty [T, F] array, got " + to_string(features.shape()));
  }
  std::string out = "SNF1";
  put_u32(out, static_cast<std::uint32_t>(features.dim(0)));
  put_u32(out, static_cast<std::uint32_t>(features.dim(1)));
  out.reserve(12 + 4 * features.size());
  for (std::size_t i = 0; i < features.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(features[i])));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write feature file " + path.string());
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
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
    if (cols.size() != 3) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 3 columns");
    ManifestEntry e;
    e.path = cols[0];
    try {
      std::size_t used = 0;
      e.speaker = std::stoi(cols[1], &used);
      if (used != cols[1].size() || e.speaker < 0) throw std::invalid_argument("speaker");
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad speaker id");
    }
    e.utterance_id = cols[2];
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write manifest " + path.string());
  for (const auto& e : entries) os << e.path << '\t' << e.speaker << '\t' << e.utterance_id << '\n';
}

std::vector<Utterance> load_utterances(const std::filesystem::path& manifest) {
  const auto entries = read_manifest(manifest);
  if (entries.empty()) throw ConfigError("empty dataset: " + manifest.string());
  const auto root = manifest.parent_path();
  std::vector<Utterance> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    Utterance u{e.utterance_id, read_features(root / e.path), e.speaker};
    if (u.features.dim(0) < 2) throw FormatError(e.path + ": utterance needs at least 2 frames");
    if (!out.empty() && u.features.dim(1) != out.front().features.dim(1)) {
      throw FormatError(e.path + ": feature width " + std::to_string(u.features.dim(1)) + " differs from " +
                        std::to_string(out.front().features.dim(1)));
    }
    out.push_back(std::move(u));
  }
  return out;
}

NdArray crop_to(const NdArray& features, std::size_t length, std::mt19937_64& rng) {
  if (features.rank() != 2 || features.dim(0) == 0) throw ShapeError("crop expects [T, F] with T > 0");
  if (length == 0) throw ConfigError("crop length must be positive");
  const std::size_t T = features.dim(0), F = features.dim(1);
  std::size_t start = 0;
  if (T > length) start = std::uniform_int_distribution<std::size_t>(0, T - length)(rng);
  std::vector<double> data(length * F);
  for (std::size_t t = 0; t < length; ++t) {
    const std::size_t src = T >= length ? start + t : t % T;
    std::copy_n(features.raw() + src * F, F, data.begin() + static_cast<std::ptrdiff_t>(t * F));
  }
  return NdArray({length, F}, std::move(data), features.dtype());
}

NdArray crop(const NdArray& features, std::size_t t_min, std::size_t t_max, std::mt19937_64& rng) {
  if (t_min == 0 || t_max < t_min) throw ConfigError("crop needs 0 < t_min <= t_max");
  if (features.rank() != 2 || features.dim(0) == 0) throw ShapeError("crop expects [T, F] with T > 0");
  const std::size_t T = features.dim(0);
  if (T < t_min) return crop_to(features, t_min, rng);
  const std::size_t len = std::uniform_int_distribution<std::size_t>(t_min, std::min(t_max, T))(rng);
  return crop_to(features, len, rng);
}

NdArray make_batch(std::span<const Utterance> utts, std::span<const std::size_t> indices, std::size_t length,
                   std::mt19937_64& rng) {
  if (indices.empty()) throw ConfigError("empty batch");
  const std::size_t F = utts[indices.front()].features.dim(1);
  std::vector<double> data;
  data.reserve(indices.size() * length * F);
  for (std::size_t i : indices) {
    const NdArray c = crop_to(utts[i].features, length, rng);
    data.insert(data.end(), c.data().begin(), c.data().end());
  }
  return NdArray({indices.size(), length, F}, std::move(data), DType::F64);
}

TrialSet make_trials(std::span<const Utterance> utts, std::uint64_t seed) {
  TrialSet set;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    for (std::size_t j = i + 1; j < utts.size(); ++j) {
      if (utts[i].speaker == utts[j].speaker) set.trials.push_back({utts[i].id, utts[j].id, true});
    }
  }
  const std::size_t targets = set.trials.size();
  std::size_t cross_pairs = 0;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    for (std::size_t j = i + 1; j < utts.size(); ++j) cross_pairs += utts[i].speaker != utts[j].speaker;
  }
  if (targets == 0 || cross_pairs < targets) throw ConfigError("cannot build balanced trials from this split");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, utts.size() - 1);
  std::set<std::pair<std::size_t, std::size_t>> used;
  while (used.size() < targets) {
    std::size_t i = pick(rng), j = pick(rng);
    if (utts[i].speaker == utts[j].speaker) continue;
    if (i > j) std::swap(i, j);
    if (used.insert({i, j}).second) set.trials.push_back({utts[i].id, utts[j].id, false});
  }
  return set;
}

}  // namespace speechnas
