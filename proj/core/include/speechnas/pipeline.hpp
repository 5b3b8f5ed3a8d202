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
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "speechnas/bayesopt.hpp"
#include "speechnas/config.hpp"
#include "speechnas/data.hpp"
#include "speechnas/metrics.hpp"
#include "speechnas/network.hpp"

namespace speechnas {

/// Worker count from SPEECHNAS_THREADS, else the hardware concurrency; at least 1.
std::size_t worker_threads();

struct Dataset {
  std::vector<Utterance> train;
  std::vector<Utterance> val;
  TrialSet trials;
  std::size_t num_speakers = 0;
  std::size_t feature_dim = 0;
};

/// Reads the train/val manifests and the trial list written by generate().
Dataset load_dataset(const std::filesystem::path& dir);

/// Network settings for `cfg` sized to the dataset.
NetConfig net_config(const RunConfig& cfg, const Dataset& data, ClassifierKind classifier);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::optional<double> val_eer;
};

/// Tab-separated with a header row.
std::string format_log(std::span<const EpochLog> log);

struct TrainedNetwork {
  Network net;
  std::vector<EpochLog> log;
};

/// Single-path uniform-sampling supernet training. `loss` is "ce" or "aam_mhe".
TrainedNetwork train_supernet(const RunConfig& cfg, const Dataset& data, const std::string& loss, std::uint64_t seed,
                              std::ostream* progress = nullptr);

using EmbeddingStore = std::map<std::string, std::vector<double>>;

/// Eval-mode embeddings of `utts`, truncated to `max_frames` frames when non-zero.
EmbeddingStore embed_utterances(const Network& net, const ArchCode& arch, std::span<const Utterance> utts,
                                std::size_t max_frames, std::size_t threads = 1);

/// Cosine scores of every trial. Throws ConfigError on an id missing from the store.
std::vector<double> score_trials(const TrialSet& trials, const EmbeddingStore& store);

/// Copy of the candidate's sub-network with normalization statistics re-estimated on training batches.
Network recalibrated_candidate(const Network& supernet, const ArchCode& arch, const Dataset& data,
                               const RunConfig& cfg);

/// Validation metrics of `arch` using the supernet's shared weights; never mutates the supernet.
MetricReport evaluate_shared_report(const Network& supernet, const ArchCode& arch, const Dataset& data,
                                    const RunConfig& cfg, std::size_t threads = 1);
double evaluate_shared(const Network& supernet, const ArchCode& arch, const Dataset& data, const RunConfig& cfg);

/// BO search over the supernet's space. Every evaluation is appended to
/// `history_file`; an existing `resume` history is loaded first and never re-evaluated.
SearchHistory search(const RunConfig& cfg, const Network& supernet, const Dataset& data,
                     const std::filesystem::path& history_file, const std::optional<std::filesystem::path>& resume = {},
                     std::ostream* progress = nullptr);

/// `rank<TAB>arch<TAB>eer` lines for the k best entries.
std::string format_top(const SearchHistory& history, std::size_t k);

struct EvalReport {
  std::string arch;
  MetricReport metrics;
  std::size_t params = 0;
  double seconds = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> scores;  // per trial, in trial-list order
};

std::string format_eval_report(const EvalReport& report);

struct RetrainResult {
  Network net;  // the best-validation-EER epoch
  std::vector<EpochLog> log;
  EvalReport report;
};

/// Trains `arch` with AAM + MHE. Starts from supernet slices when `supernet`
/// is given and cfg.retrain_warm_start is set; otherwise from a fresh init.
RetrainResult retrain(const RunConfig& cfg, const ArchCode& arch, const Network* supernet, const Dataset& data,
                      std::uint64_t seed, std::ostream* progress = nullptr);

/// Scores `trials` with a trained candidate.
EvalReport evaluate_model(const Network& model, const TrialSet& trials, std::span<const Utterance> utts,
                          std::size_t max_frames, std::uint64_t seed = 0);

struct LossComparison {
  struct Cell {
    double shared_min = 0.0;
    double shared_max = 0.0;
    std::vector<double> shared;  // shared-weight EERs of the top searched archs
    std::vector<double> retrain; // their retrained EERs
  };
  Cell ce;
  Cell aam_mhe;
  std::size_t top_k = 0;
};

/// Trains a cross-entropy and an AAM+MHE supernet, runs identical searches and
/// retrains the top `top_k` architectures of each.
LossComparison compare_supernet_losses(const RunConfig& cfg, const Dataset& data, std::size_t top_k,
                                       const std::filesystem::path& work_dir, std::ostream* progress = nullptr);
std::string format_loss_comparison(const LossComparison& cmp);

}  // namespace speechnas
