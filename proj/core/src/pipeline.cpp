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

#include "speechnas/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "speechnas/errors.hpp"
#include "speechnas/losses.hpp"

namespace speechnas {
namespace {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::size_t argmax_row(const NdArray& m, std::size_t row) {
  const std::size_t C = m.dim(1);
  std::size_t best = 0;
  for (std::size_t c = 1; c < C; ++c) {
    if (m[row * C + c] > m[row * C + best]) best = c;
  }
  return best;
}

struct StepResult {
  double loss = 0.0;
  std::size_t correct = 0;
};

StepResult train_step(Network& net, const ArchCode& arch, const NdArray& batch, std::span<const int> labels,
                      bool aam, const AamMheOptions& aam_opts, const SgdOptions& sgd) {
  Graph g(DType::F32);
  NodeId x = g.constant(batch);
  ForwardOptions fo;
  fo.mode = Mode::Train;
  fo.compute_logits = !aam;
  const ForwardResult r = forward(g, net, arch, x, fo);
  StepResult out;
  NodeId loss;
  if (aam) {
    NodeId w = g.param(net.params().get("head.aam.w"));
    loss = aam_mhe(g, r.embeddings, w, labels, aam_opts);
    const NdArray& e = g.value(r.embeddings);
    const NdArray& wv = g.value(w);
    const std::size_t N = e.dim(0), D = e.dim(1), C = wv.dim(1);
    std::vector<double> wnorm(C, 0.0);
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t c = 0; c < C; ++c) wnorm[c] += wv[d * C + c] * wv[d * C + c];
    for (std::size_t n = 0; n < N; ++n) {
      std::size_t best = 0;
      double best_cos = -2.0;
      for (std::size_t c = 0; c < C; ++c) {
        double dot = 0.0;
        for (std::size_t d = 0; d < D; ++d) dot += e[n * D + d] * wv[d * C + c];
        const double cs = dot / std::max(std::sqrt(wnorm[c]), 1e-12);
        if (cs > best_cos) {
          best_cos = cs;
          best = c;
        }
      }
      out.correct += static_cast<int>(best) == labels[n];
    }
  } else {
    loss = cross_entropy(g, r.logits, labels);
    const NdArray& lv = g.value(r.logits);
    for (std::size_t n = 0; n < lv.dim(0); ++n) out.correct += static_cast<int>(argmax_row(lv, n)) == labels[n];
  }
  out.loss = g.value(loss).item();
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");
  g.backward(loss);
  sgd_step(net.params(), sgd);
  return out;
}

/// Shared epoch loop; `pick_arch` returns the path for each step.
template <typename PickArch, typename EndEpoch>
std::vector<EpochLog> run_epochs(Network& net, const Schedule& sched, const Dataset& data, bool aam,
                                 const AamMheOptions& aam_opts, std::uint64_t seed, PickArch&& pick_arch,
                                 EndEpoch&& end_epoch, std::ostream* progress, const char* tag) {
  if (data.train.empty()) throw ConfigError("empty training set");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> crop_len(sched.crop_min, sched.crop_max);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochLog> log;
  for (std::size_t epoch = 1; epoch <= sched.epochs; ++epoch) {
    SgdOptions sgd{sched.lr_at(epoch), sched.momentum, sched.weight_decay};
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, step = 0;
    for (std::size_t start = 0; start < order.size(); start += sched.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + sched.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const ArchCode arch = pick_arch(rng);
      const NdArray batch = make_batch(data.train, idx, crop_len(rng), rng);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(data.train[i].speaker);
      StepResult r;
      try {
        r = train_step(net, arch, batch, labels, aam, aam_opts, sgd);
      } catch (const NumericError& e) {
        throw NumericError(std::string(tag) + ": epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                           " arch " + arch.to_string() + " lr " + std::to_string(sgd.lr) + ": " + e.what());
      }
      loss_sum += r.loss * static_cast<double>(idx.size());
      correct += r.correct;
      seen += idx.size();
    }
    EpochLog entry{epoch, sgd.lr, loss_sum / static_cast<double>(seen),
                   static_cast<double>(correct) / static_cast<double>(seen), std::nullopt};
    end_epoch(entry);
    if (progress) {
      *progress << tag << " epoch " << epoch << " lr " << entry.lr << " loss " << entry.loss << " acc "
                << entry.accuracy;
      if (entry.val_eer) *progress << " val_eer " << *entry.val_eer;
      *progress << std::endl;
    }
    log.push_back(entry);
  }
  return log;
}

NdArray truncate_frames(const NdArray& f, std::size_t max_frames) {
  if (max_frames == 0 || f.dim(0) <= max_frames) return f;
  const std::size_t F = f.dim(1);
  std::vector<double> data(f.data().begin(), f.data().begin() + static_cast<std::ptrdiff_t>(max_frames * F));
  return NdArray({max_frames, F}, std::move(data), f.dtype());
}

}  // namespace

std::size_t worker_threads() {
  if (const char* env = std::getenv("SPEECHNAS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    throw ConfigError("SPEECHNAS_THREADS must be a positive integer, got '" + std::string(env) + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("data directory not found: " + dir.string());
  Dataset d;
  d.train = load_utterances(dir / kTrainManifestFile);
  d.val = load_utterances(dir / kValManifestFile);
  d.trials = read_trials(dir / kTrialsFile);
  d.feature_dim = d.train.front().features.dim(1);
  int max_speaker = 0;
  for (const auto& u : d.train) max_speaker = std::max(max_speaker, u.speaker);
  for (const auto& u : d.val) {
    if (u.features.dim(1) != d.feature_dim) throw FormatError("validation feature width differs from training");
    max_speaker = std::max(max_speaker, u.speaker);
  }
  d.num_speakers = static_cast<std::size_t>(max_speaker) + 1;
  return d;
}

NetConfig net_config(const RunConfig& cfg, const Dataset& data, ClassifierKind classifier) {
  NetConfig n = cfg.net;
  n.input_dim = data.feature_dim;
  n.num_speakers = data.num_speakers;
  n.classifier = classifier;
  return n;
}

std::string format_log(std::span<const EpochLog> log) {
  std::ostringstream os;
  os << std::setprecision(8);
  const bool has_val = std::any_of(log.begin(), log.end(), [](const EpochLog& e) { return e.val_eer.has_value(); });
  os << "epoch\tlr\tloss\taccuracy" << (has_val ? "\tval_eer" : "") << '\n';
  for (const auto& e : log) {
    os << e.epoch << '\t' << e.lr << '\t' << e.loss << '\t' << e.accuracy;
    if (has_val) os << '\t' << (e.val_eer ? *e.val_eer : std::nan(""));
    os << '\n';
  }
  return os.str();
}

TrainedNetwork train_supernet(const RunConfig& cfg, const Dataset& data, const std::string& loss, std::uint64_t seed,
                              std::ostream* progress) {
  if (loss != "ce" && loss != "aam_mhe") throw ConfigError("supernet loss must be ce or aam_mhe, got " + loss);
  const bool aam = loss == "aam_mhe";
  Network net = Network::supernet(net_config(cfg, data, aam ? ClassifierKind::Cosine : ClassifierKind::Softmax),
                                  cfg.space, derive(seed, 1));
  auto log = run_epochs(
      net, cfg.train, data, aam, cfg.loss, derive(seed, 2),
      [&](std::mt19937_64& rng) { return sample_uniform(cfg.space, rng); }, [](EpochLog&) {}, progress, "supernet");
  return {std::move(net), std::move(log)};
}

EmbeddingStore embed_utterances(const Network& net, const ArchCode& arch, std::span<const Utterance> utts,
                                std::size_t max_frames, std::size_t threads) {
  std::vector<std::vector<double>> out(utts.size());
  parallel_for(utts.size(), threads,
               [&](std::size_t i) { out[i] = embed(net, arch, truncate_frames(utts[i].features, max_frames)); });
  EmbeddingStore store;
  for (std::size_t i = 0; i < utts.size(); ++i) store.emplace(utts[i].id, std::move(out[i]));
  return store;
}

std::vector<double> score_trials(const TrialSet& trials, const EmbeddingStore& store) {
  std::vector<double> scores;
  scores.reserve(trials.trials.size());
  for (const auto& t : trials.trials) {
    const auto e = store.find(t.enroll);
    if (e == store.end()) throw ConfigError("unresolved trial id: " + t.enroll);
    const auto s = store.find(t.test);
    if (s == store.end()) throw ConfigError("unresolved trial id: " + t.test);
    scores.push_back(cosine_score(e->second, s->second));
  }
  return scores;
}

Network recalibrated_candidate(const Network& supernet, const ArchCode& arch, const Dataset& data,
                               const RunConfig& cfg) {
  Network cand = instantiate(supernet, arch);
  if (cfg.search.bn_batches == 0 || data.train.empty()) return cand;
  std::mt19937_64 rng(derive(cfg.search.seed, 7));
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t B = std::min(cfg.train.batch_size, order.size());
  const std::size_t len = (cfg.train.crop_min + cfg.train.crop_max) / 2;
  for (std::size_t k = 0; k < cfg.search.bn_batches; ++k) {
    std::shuffle(order.begin(), order.end(), rng);
    const NdArray batch = make_batch(data.train, std::span<const std::size_t>(order.data(), B), len, rng);
    Graph g(DType::F32);
    ForwardOptions fo;
    fo.mode = Mode::Train;
    fo.compute_logits = false;
    fo.bn_momentum = 1.0 / static_cast<double>(k + 1);
    forward(g, cand, arch, g.constant(batch), fo);
  }
  for (auto& p : cand.params()) p.touched.clear();
  return cand;
}

MetricReport evaluate_shared_report(const Network& supernet, const ArchCode& arch, const Dataset& data,
                                    const RunConfig& cfg, std::size_t threads) {
  if (supernet.space()) require_valid(arch, *supernet.space());
  const Network cand = recalibrated_candidate(supernet, arch, data, cfg);
  const EmbeddingStore store = embed_utterances(cand, arch, data.val, cfg.eval_max_frames, threads);
  const auto scores = score_trials(data.trials, store);
  return evaluate_scores(scores, data.trials.labels());
}

double evaluate_shared(const Network& supernet, const ArchCode& arch, const Dataset& data, const RunConfig& cfg) {
  return evaluate_shared_report(supernet, arch, data, cfg).eer;
}

SearchHistory search(const RunConfig& cfg, const Network& supernet, const Dataset& data,
                     const std::filesystem::path& history_file, const std::optional<std::filesystem::path>& resume,
                     std::ostream* progress) {
  if (!supernet.space()) throw ConfigError("search needs a supernet checkpoint, got a candidate");
  if (!(*supernet.space() == cfg.space)) throw ConfigError("supernet search space differs from the configured space");
  SearchHistory history;
  if (resume) {
    history = SearchHistory::load(*resume);
    for (std::size_t i = 0; i < history.size(); ++i) {
      const auto v = validate(history[i].arch, cfg.space);
      if (!v.empty()) {
        throw ConfigError("resume history " + resume->string() + " entry " + std::to_string(i + 1) +
                          " does not fit the configured space: " + v.front().message);
      }
    }
  }
  const bool same_file = resume && std::filesystem::exists(history_file) &&
                         std::filesystem::equivalent(*resume, history_file);
  if (!same_file) history.save(history_file);

  BoOptions opts;
  opts.init_count = cfg.search.init_count;
  opts.iterations = cfg.search.n1;
  opts.batch_size = cfg.search.n2;
  opts.propose.pool_size = cfg.search.pool_size;
  opts.propose.mutation_rate = cfg.search.mutation_rate;
  opts.propose.num_parents = cfg.search.num_parents;
  opts.seed = cfg.search.seed;

  const std::size_t threads = worker_threads();
  const BatchObjective objective = [&](std::span<const ArchCode> archs) {
    std::vector<double> eers(archs.size());
    parallel_for(archs.size(), threads, [&](std::size_t i) { eers[i] = evaluate_shared(supernet, archs[i], data, cfg); });
    return eers;
  };
  const BatchCallback on_batch = [&](std::size_t it, std::span<const ArchCode> archs, std::span<const double> eers) {
    for (std::size_t i = 0; i < archs.size(); ++i) append_history_line(history_file, archs[i], eers[i]);
    if (progress) {
      *progress << "search iteration " << it << " evaluated " << archs.size() << " best "
                << *std::min_element(eers.begin(), eers.end()) << " tau " << history.best() << std::endl;
    }
    return false;
  };
  run_bo(history, cfg.space, objective, opts, on_batch);
  return history;
}

std::string format_top(const SearchHistory& history, std::size_t k) {
  std::ostringstream os;
  os << std::setprecision(8);
  const auto ranked = history.ranked();
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
    os << i + 1 << '\t' << ranked[i].arch.to_string() << '\t' << ranked[i].value << '\n';
  }
  return os.str();
}

std::string format_eval_report(const EvalReport& r) {
  std::ostringstream os;
  os << "arch = " << r.arch << '\n' << format_report(r.metrics) << "params = " << r.params << '\n'
     << std::setprecision(6) << "seconds = " << r.seconds << '\n'
     << "seed = " << r.seed << '\n';
  return os.str();
}

RetrainResult retrain(const RunConfig& cfg, const ArchCode& arch, const Network* supernet, const Dataset& data,
                      std::uint64_t seed, std::ostream* progress) {
  const auto t0 = std::chrono::steady_clock::now();
  require_valid(arch, cfg.space);
  const NetConfig ncfg = net_config(cfg, data, ClassifierKind::Cosine);
  Network net = [&] {
    if (supernet && cfg.retrain_warm_start) {
      Network n = instantiate(*supernet, arch);
      n.reset_classifier(ClassifierKind::Cosine, derive(seed, 3));
      return n;
    }
    Network n(ncfg, std::vector<SlotChoice>(arch.begin(), arch.end()), derive(seed, 1));
    n.set_arch(arch);
    return n;
  }();
  if (net.config().input_dim != data.feature_dim || net.config().num_speakers != data.num_speakers) {
    throw ConfigError("supernet was trained on a dataset of a different shape");
  }

  std::optional<Network> best;
  double best_eer = std::numeric_limits<double>::infinity();
  auto log = run_epochs(
      net, cfg.retrain, data, true, cfg.loss, derive(seed, 2), [&](std::mt19937_64&) { return arch; },
      [&](EpochLog& e) {
        const auto store = embed_utterances(net, arch, data.val, cfg.eval_max_frames, worker_threads());
        const double eer = speechnas::eer(score_trials(data.trials, store), data.trials.labels()).eer;
        e.val_eer = eer;
        if (eer < best_eer) {
          best_eer = eer;
          best = net;
        }
      },
      progress, "retrain");

  RetrainResult out{std::move(*best), std::move(log), {}};
  out.report = evaluate_model(out.net, data.trials, data.val, cfg.eval_max_frames, seed);
  out.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

EvalReport evaluate_model(const Network& model, const TrialSet& trials, std::span<const Utterance> utts,
                          std::size_t max_frames, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!model.arch()) throw ConfigError("eval needs a candidate checkpoint, got a supernet");
  const ArchCode& arch = *model.arch();
  std::map<std::string, const Utterance*> by_id;
  for (const auto& u : utts) by_id.emplace(u.id, &u);
  std::vector<Utterance> needed;
  std::map<std::string, bool> wanted;
  for (const auto& t : trials.trials) {
    for (const std::string* id : {&t.enroll, &t.test}) {
      if (wanted.contains(*id)) continue;
      const auto it = by_id.find(*id);
      if (it == by_id.end()) throw ConfigError("unresolved trial id: " + *id);
      wanted[*id] = true;
      needed.push_back(*it->second);
    }
  }
  const auto store = embed_utterances(model, arch, needed, max_frames, worker_threads());
  EvalReport r;
  r.arch = arch.to_string();
  r.scores = score_trials(trials, store);
  r.metrics = evaluate_scores(r.scores, trials.labels());
  r.params = count_params(arch, model.config(), false);
  r.seed = seed;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

LossComparison compare_supernet_losses(const RunConfig& cfg, const Dataset& data, std::size_t top_k,
                                       const std::filesystem::path& work_dir, std::ostream* progress) {
  if (top_k == 0) throw ConfigError("top_k must be positive");
  LossComparison cmp;
  cmp.top_k = top_k;
  for (const std::string loss : {"ce", "aam_mhe"}) {
    LossComparison::Cell& cell = loss == "ce" ? cmp.ce : cmp.aam_mhe;
    const TrainedNetwork sn = train_supernet(cfg, data, loss, cfg.seed, progress);
    const auto hist_path = work_dir / ("history_" + loss + ".tsv");
    std::filesystem::remove(hist_path);
    const SearchHistory hist = search(cfg, sn.net, data, hist_path, std::nullopt, progress);
    const auto ranked = hist.ranked();
    for (std::size_t i = 0; i < std::min(top_k, ranked.size()); ++i) {
      cell.shared.push_back(ranked[i].value);
      cell.retrain.push_back(retrain(cfg, ranked[i].arch, nullptr, data, cfg.seed, progress).report.metrics.eer);
    }
    cell.shared_min = *std::min_element(cell.shared.begin(), cell.shared.end());
    cell.shared_max = *std::max_element(cell.shared.begin(), cell.shared.end());
  }
  return cmp;
}

std::string format_loss_comparison(const LossComparison& cmp) {
  std::ostringstream os;
  os << std::setprecision(6);
  auto list = [](const std::vector<double>& xs) {
    std::ostringstream s;
    s << std::setprecision(6);
    for (std::size_t i = 0; i < xs.size(); ++i) s << (i ? "," : "") << xs[i];
    return s.str();
  };
  os << "top_k = " << cmp.top_k << '\n';
  for (const auto& [name, cell] : {std::pair{"ce", &cmp.ce}, std::pair{"aam_mhe", &cmp.aam_mhe}}) {
    os << name << ".shared_eer_min = " << cell->shared_min << '\n'
       << name << ".shared_eer_max = " << cell->shared_max << '\n'
       << name << ".shared_eer = " << list(cell->shared) << '\n'
       << name << ".retrain_eer = " << list(cell->retrain) << '\n';
  }
  return os.str();
}

}  // namespace speechnas
