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
#include <random>
#include <span>
#include <string>
#include <vector>

#include "speechnas/metrics.hpp"
#include "speechnas/tensor.hpp"

namespace speechnas {

struct Utterance {
  std::string id;
  NdArray features;  // [T, F]
  int speaker = 0;
};

/// Synthetic speakers: each utterance is an AR(1) process around a speaker prototype.
struct SynthSpec {
  std::size_t num_speakers = 32;
  std::size_t utts_per_speaker = 20;
  std::size_t feature_dim = 30;
  std::size_t t_min = 200;
  std::size_t t_max = 400;
  double scale = 1.0;
  double rho = 0.5;
  double noise = 0.5;
  /// Utterances per speaker held out for validation.
  std::size_t val_per_speaker = 5;
  std::uint64_t seed = 0;

  /// Throws ConfigError on an invalid spec.
  void check() const;
};

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  int speaker = 0;
  std::string utterance_id;
};

struct GeneratedData {
  std::filesystem::path manifest;        // every utterance
  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;
  std::filesystem::path trials;
};

/// File names written by generate() inside the output directory.
inline constexpr const char* kManifestFile = "manifest.tsv";
inline constexpr const char* kTrainManifestFile = "train.tsv";
inline constexpr const char* kValManifestFile = "val.tsv";
inline constexpr const char* kTrialsFile = "trials.tsv";

/// Writes feature files, manifests, the train/val split and a balanced val trial list.
GeneratedData generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

/// The speaker prototypes generate() draws for `spec` (unit vectors, [C, F]).
NdArray speaker_prototypes(const SynthSpec& spec);

// Feature file: "SNF1", u32 LE frames, u32 LE channels, LE float32 row-major.
NdArray read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const NdArray& features);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

/// Loads every utterance of a manifest. Throws on an empty manifest or mixed feature widths.
std::vector<Utterance> load_utterances(const std::filesystem::path& manifest);

/// Contiguous crop of length uniform in [t_min, min(t_max, T)]; shorter inputs wrap-pad to t_min.
NdArray crop(const NdArray& features, std::size_t t_min, std::size_t t_max, std::mt19937_64& rng);
/// Contiguous crop of exactly `length` frames (wrap-padded when T < length).
NdArray crop_to(const NdArray& features, std::size_t length, std::mt19937_64& rng);

/// Stacks crops of the selected utterances into [B, length, F].
NdArray make_batch(std::span<const Utterance> utts, std::span<const std::size_t> indices, std::size_t length,
                   std::mt19937_64& rng);

/// Balanced target / nontarget pairs over `utts`: all same-speaker pairs and as many random cross-speaker pairs.
TrialSet make_trials(std::span<const Utterance> utts, std::uint64_t seed);

}  // namespace speechnas
