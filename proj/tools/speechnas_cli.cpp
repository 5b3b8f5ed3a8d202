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

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "speechnas/archspace.hpp"
#include "speechnas/bayesopt.hpp"
#include "speechnas/config.hpp"
#include "speechnas/data.hpp"
#include "speechnas/errors.hpp"
#include "speechnas/network.hpp"
#include "speechnas/pipeline.hpp"

namespace fs = std::filesystem;
using namespace speechnas;

namespace {

struct Loaded {
  RunConfig cfg;
  fs::path data_dir;
};

Loaded load_config(const fs::path& path) {
  Loaded l{RunConfig::load(path), {}};
  l.data_dir = l.cfg.data_dir;
  if (!l.data_dir.empty() && l.data_dir.is_relative()) l.data_dir = path.parent_path() / l.data_dir;
  return l;
}

Dataset dataset_for(const Loaded& l) {
  if (l.data_dir.empty()) throw ConfigError("data.dir is not set in the config");
  return load_dataset(l.data_dir);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

ArchCode arch_from_arg(const std::string& text) {
  return is_preset_name(text) ? preset(text) : ArchCode::parse(text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speechnas: weight-sharing architecture search for speaker embeddings"};
  app.require_subcommand(1);

  std::string config, out, supernet, resume, arch, model, trials, history, loss;
  std::optional<std::uint64_t> seed;
  std::size_t top = 10;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic speaker dataset");
  gen->add_option("--config", config)->required();
  gen->add_option("--out", out)->required();

  auto* train = app.add_subcommand("train-supernet", "train the weight-sharing supernet");
  train->add_option("--config", config)->required();
  train->add_option("--out", out)->required();
  train->add_option("--loss", loss)->check(CLI::IsMember({"ce", "aam_mhe"}));
  train->add_option("--seed", seed);

  auto* srch = app.add_subcommand("search", "Bayesian-optimisation search with weight sharing");
  srch->add_option("--config", config)->required();
  srch->add_option("--supernet", supernet)->required();
  srch->add_option("--out", out)->required();
  srch->add_option("--resume", resume);

  auto* ret = app.add_subcommand("retrain", "train one architecture with AAM + MHE");
  ret->add_option("--config", config)->required();
  ret->add_option("--arch", arch, "code string or preset name")->required();
  ret->add_option("--supernet", supernet);
  ret->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("eval", "score a trial list with a trained model");
  ev->add_option("--config", config)->required();
  ev->add_option("--model", model)->required();
  ev->add_option("--trials", trials)->required();
  ev->add_option("--out", out, "report path")->required();

  auto* rep = app.add_subcommand("report", "print the best entries of a search history");
  rep->add_option("--history", history)->required();
  rep->add_option("--top", top)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      RunConfig cfg = RunConfig::load(config);
      const GeneratedData g = generate(cfg.data, out);
      write_text(fs::path(out) / "config.txt", cfg.to_text());
      std::cout << "manifest = " << g.manifest.string() << "\ntrain = " << g.train_manifest.string()
                << "\nval = " << g.val_manifest.string() << "\ntrials = " << g.trials.string() << '\n';
    } else if (*train) {
      const Loaded l = load_config(config);
      const Dataset data = dataset_for(l);
      const std::string use_loss = loss.empty() ? l.cfg.supernet_loss : loss;
      const std::uint64_t use_seed = seed.value_or(l.cfg.seed);
      const TrainedNetwork t = train_supernet(l.cfg, data, use_loss, use_seed, &std::cerr);
      const fs::path dir(out);
      save_checkpoint(t.net, dir / "supernet.ckpt");
      write_text(dir / "train_log.tsv", format_log(t.log));
      write_text(dir / "config.txt", l.cfg.to_text());
      std::cout << "checkpoint = " << (dir / "supernet.ckpt").string() << "\nfinal_loss = " << t.log.back().loss
                << "\nfinal_accuracy = " << t.log.back().accuracy << '\n';
    } else if (*srch) {
      const Loaded l = load_config(config);
      const Dataset data = dataset_for(l);
      const Network net = load_checkpoint(supernet);
      const fs::path dir(out);
      const std::optional<fs::path> resume_path = resume.empty() ? std::nullopt : std::optional<fs::path>(resume);
      const SearchHistory h = search(l.cfg, net, data, dir / "history.tsv", resume_path, &std::cerr);
      write_text(dir / "search_report.txt", format_top(h, 10));
      std::cout << "history = " << (dir / "history.tsv").string() << "\nevaluations = " << h.size()
                << "\nbest_arch = " << h.best_entry().arch.to_string() << "\nbest_eer = " << h.best() << '\n';
    } else if (*ret) {
      const Loaded l = load_config(config);
      const Dataset data = dataset_for(l);
      const ArchCode a = arch_from_arg(arch);
      std::optional<Network> sn;
      if (!supernet.empty()) sn = load_checkpoint(supernet);
      const RetrainResult r = retrain(l.cfg, a, sn ? &*sn : nullptr, data, l.cfg.seed, &std::cerr);
      const fs::path dir(out);
      save_checkpoint(r.net, dir / "model.ckpt");
      write_text(dir / "retrain_log.tsv", format_log(r.log));
      write_text(dir / "report.txt", format_eval_report(r.report));
      std::cout << format_eval_report(r.report);
    } else if (*ev) {
      const Loaded l = load_config(config);
      const Network net = load_checkpoint(model);
      if (l.data_dir.empty()) throw ConfigError("data.dir is not set in the config");
      std::vector<Utterance> utts = load_utterances(l.data_dir / kManifestFile);
      TrialSet ts = read_trials(trials);
      const EvalReport r = evaluate_model(net, ts, utts, l.cfg.eval_max_frames, l.cfg.seed);
      write_text(out, format_eval_report(r));
      ts.scores = r.scores;
      write_trials(ts, fs::path(out).string() + ".scores");
      std::cout << format_eval_report(r);
    } else if (*rep) {
      std::cout << format_top(SearchHistory::load(history), top);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
