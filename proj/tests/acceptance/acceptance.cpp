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

// Acceptance driver: one PASS/FAIL line per criterion, details indented below.

#include <CLI11.hpp>
#include <boost/math/distributions/chi_squared.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gp_oracle.hpp"
#include "gradcheck.hpp"
#include "metric_oracle.hpp"
#include "net_fixtures.hpp"
#include "op_catalog.hpp"
#include "separable_objective.hpp"
#include "speechnas/archspace.hpp"
#include "speechnas/bayesopt.hpp"
#include "speechnas/losses.hpp"
#include "speechnas/metrics.hpp"
#include "speechnas/network.hpp"

using namespace speechnas;
using namespace speechnas::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> details;
};

struct Context {
  fs::path cli;
  fs::path work;
};

template <class... Args>
std::string fmt(const Args&... args) {
  std::ostringstream os;
  os << std::setprecision(4);
  (os << ... << args);
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome gradient_suite(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t ops = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto cases = op_cases(seed);
    ops = cases.size();
    for (const auto& c : cases) {
      const GradCheck r = check_op(c.op, c.inputs, seed);
      if (r.max_rel > worst) {
        worst = r.max_rel;
        where = c.name + " " + r.worst;
      }
    }
    Network net = tiny_block_net(seed);
    std::vector<Parameter*> params;
    for (auto& p : net.params()) {
      if (p.name.starts_with("block0.") && p.trainable) params.push_back(&p);
    }
    std::mt19937_64 rng(seed);
    const NdArray x = random_array({2, 6, 4}, rng);
    const GradCheck r = check_params(
        params,
        [&](Graph& g) {
          ForwardOptions o;
          o.mode = Mode::Train;
          return dtdnn_block(g, net, 0, g.constant(x), SlotChoice{3, 3, 2}, o);
        },
        seed, 1e-6);
    if (r.max_rel > worst) {
      worst = r.max_rel;
      where = "block " + r.worst;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          fmt(ops, " ops + full block, 10 seeds, max rel err ", worst, " (< 1e-4), ", secs, " s (< 60)"),
          {"worst: " + where}};
}

Outcome stats_pool_oracle(const Context&) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> dim(2, 12);
  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    const NdArray h = random_array({dim(rng), dim(rng)}, rng, -3.0, 3.0);
    Graph g(DType::F64);
    const NdArray got = g.value(stats_pool(g, g.constant(h)));
    const auto want = brute_moments(h, 1e-8);
    for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  NdArray flat = random_array({9, 3}, rng);
  for (std::size_t t = 0; t < 9; ++t) flat[t * 3 + 1] = 0.75;
  Graph g(DType::F64);
  const NdArray pooled = g.value(stats_pool(g, g.constant(flat)));
  const bool finite = std::all_of(pooled.data().begin(), pooled.data().end(), [](double v) { return std::isfinite(v); });
  return {worst < 1e-6 && finite,
          fmt("100 inputs, max abs err ", worst, " (< 1e-6); constant channel finite: ", finite ? "yes" : "no"),
          {}};
}

Outcome loss_identities(const Context&) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> cls(0, 3);
  double worst = 0.0;
  for (int n = 0; n < 50; ++n) {
    const NdArray e = random_array({6, 5}, rng);
    const NdArray w = random_array({5, 4}, rng);
    std::vector<int> labels(6);
    for (auto& l : labels) l = cls(rng);
    AamMheOptions o;
    o.margin = 0.0;
    o.lambda = 0.0;
    NdArray cos({6, 4}, DType::F64);
    for (std::size_t i = 0; i < 6; ++i) {
      double ne = 0.0;
      for (std::size_t r = 0; r < 5; ++r) ne += e[i * 5 + r] * e[i * 5 + r];
      for (std::size_t j = 0; j < 4; ++j) {
        double nw = 0.0, dot = 0.0;
        for (std::size_t r = 0; r < 5; ++r) {
          nw += w[r * 4 + j] * w[r * 4 + j];
          dot += e[i * 5 + r] * w[r * 4 + j];
        }
        cos[i * 4 + j] = o.scale * dot / std::sqrt(ne * nw);
      }
    }
    Graph g(DType::F64);
    const double aam = g.value(aam_mhe(g, g.constant(e), g.constant(w), labels, o)).item();
    const double ce = g.value(cross_entropy(g, g.constant(cos), labels)).item();
    worst = std::max(worst, std::abs(aam - ce));
  }
  const std::vector<int> label = {0};
  Graph g(DType::F64);
  const double mhe = g.value(hyperspherical_energy(g, g.constant(NdArray({2, 2}, {1.0, 0.0, 0.0, 1.0}, DType::F64)),
                                                   label, 0.01))
                         .item();
  return {worst < 1e-6 && mhe == 0.005,
          fmt("aam(m=0, lambda=0) vs scaled-cosine CE over 50 batches: ", worst, " (< 1e-6); MHE worked value ",
              std::setprecision(17), mhe, " (== 0.005)"),
          {}};
}

Outcome metric_oracle(const Context&) {
  std::mt19937_64 rng(123);
  std::vector<double> s;
  std::vector<int> l;
  double worst_eer = 0.0, worst_dcf = 0.0;
  for (int n = 0; n < 200; ++n) {
    random_scores(rng, s, l);
    worst_eer = std::max(worst_eer, std::abs(eer(s, l).eer - oracle_eer(s, l)));
    for (double p : {0.01, 0.001}) worst_dcf = std::max(worst_dcf, std::abs(min_dcf(s, l, p) - oracle_min_dcf(s, l, p, true)));
  }
  const std::vector<int> labels = {1, 1, 0, 0};
  const std::vector<double> crossing = {0.1, 0.9, 0.2, 0.8};
  const double cross = eer(crossing, labels).eer;
  return {worst_eer < 1e-9 && worst_dcf < 1e-9 && cross == 0.5,
          fmt("200 score sets, eer err ", worst_eer, ", min_dcf err ", worst_dcf, " (< 1e-9); crossing example eer ",
              cross, " (== 0.5)"),
          {}};
}

Outcome isolation(const Context&) {
  const NetConfig cfg = small_config();
  const SearchSpace space = small_space();
  Network net = Network::supernet(cfg, space, 9);
  std::mt19937_64 rng(12);
  const std::vector<int> labels = {0, 3, 1, 4};
  std::size_t bad_grad = 0, bad_value = 0, bad_box = 0;
  for (int step = 0; step < 20; ++step) {
    const ArchCode a = sample_uniform(space, rng);
    const ParamStore before = net.params();
    Graph g(DType::F64);
    ForwardOptions opts;
    opts.mode = Mode::Train;
    const auto r = forward(g, net, a, g.constant(batch_input(4, 6, 6, step)), opts);
    g.backward(cross_entropy(g, r.logits, labels));
    const auto dims = layer_input_dims(cfg, a);
    auto box_of = [&](const std::string& name) {
      const std::size_t layer = std::stoul(name.substr(5, name.find('.') - 5));
      return expected_extents(name.substr(name.find('.') + 1), a[layer], dims[layer],
                              cfg.bottleneck_width(a[layer].cdim), cfg.branch_kernel);
    };
    for (const auto& p : net.params()) {
      if (!p.name.starts_with("block") || !p.trainable) continue;
      const Shape box = box_of(p.name);
      bad_box += p.touched != box;
      for (std::size_t i = 0; i < p.grad.size(); ++i) bad_grad += !inside(p.value.shape(), box, i) && p.grad[i] != 0.0;
    }
    sgd_step(net.params(), SgdOptions{});
    for (const auto& p : net.params()) {
      if (!p.name.starts_with("block")) continue;
      const Parameter& old = before.get(p.name);
      const Shape box = box_of(p.name);
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        bad_value += !inside(p.value.shape(), box, i) && p.value[i] != old.value[i];
      }
    }
  }
  return {bad_grad == 0 && bad_value == 0 && bad_box == 0,
          fmt("20 random paths: nonzero slack grads ", bad_grad, ", changed slack weights ", bad_value,
              ", touched-box mismatches ", bad_box),
          {}};
}

Outcome instantiation(const Context&) {
  const NetConfig cfg = small_config();
  const SearchSpace space = small_space();
  Network net = Network::supernet(cfg, space, 21);
  std::mt19937_64 rng(4);
  for (auto& p : net.params()) {
    if (p.name.ends_with("mean") || p.name.ends_with("beta")) p.value = random_array(p.value.shape(), rng, -0.5, 0.5);
    if (p.name.ends_with("var") || p.name.ends_with("gamma")) p.value = random_array(p.value.shape(), rng, 0.5, 1.5);
  }
  double worst = 0.0;
  for (int n = 0; n < 20; ++n) {
    const ArchCode a = sample_uniform(space, rng);
    const Network cand = instantiate(net, a);
    const NdArray x = batch_input(3, 8, 6, 100 + n);
    Graph g1(DType::F64), g2(DType::F64);
    const auto r1 = forward_eval(g1, net, a, g1.constant(x), true);
    const auto r2 = forward_eval(g2, cand, a, g2.constant(x), true);
    worst = std::max({worst, max_rel_diff(g1.value(r1.embeddings), g2.value(r2.embeddings)),
                      max_rel_diff(g1.value(r1.logits), g2.value(r2.logits))});
  }
  return {worst < 1e-6, fmt("20 random archs, max rel diff ", worst, " (< 1e-6)"), {}};
}

Outcome gp_correctness(const Context&) {
  const SearchSpace full = make_space("full");
  std::mt19937_64 rng(4);
  double min_eig = INFINITY;
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<ArchCode> codes;
    for (int i = 0; i < 50; ++i) codes.push_back(sample_uniform(full, rng));
    codes.push_back(codes[3]);
    for (double gamma : {0.1, 2.0, 50.0}) {
      const Eigen::MatrixXd K = kernel_matrix(codes, gamma, 1.3);
      min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(K).eigenvalues().minCoeff());
    }
  }

  const SearchSpace space = make_space("space3");
  double worst_post = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    const auto codes = clustered_codes(space, 40, rng);
    std::uniform_real_distribution<double> u(0.0, 0.3);
    std::vector<double> y;
    for (std::size_t i = 0; i < codes.size(); ++i) y.push_back(u(rng));
    const GPModel gp = GPModel::condition(observe(codes, y), GpHyper{1.5, 0.02, 1e-4, 0.1});
    for (std::size_t q = 0; q < 20; ++q) {
      const ArchCode x = q < 5 ? codes[q] : mutate(codes[q], 0.2, rng, space);
      const auto got = gp.posterior(x);
      const auto want = dense_posterior(gp.observations(), gp.hyper(), gp.jitter(), x);
      worst_post = std::max({worst_post, std::abs(got.mean - want.mean), std::abs(got.std - want.std)});
    }
  }

  SearchSpace half = full;
  half.branch_options = {2};
  half.cdim_options = {64, 96};
  half.sdim_options = {32};
  std::vector<ArchCode> codes;
  for (int i = 0; i < 25; ++i) codes.push_back(sample_uniform(half, rng));
  std::sort(codes.begin(), codes.end());
  codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
  std::vector<double> y;
  for (std::size_t i = 0; i < codes.size(); ++i) y.push_back(0.1 + 0.01 * static_cast<double>(i % 7));
  const GPModel exact = GPModel::condition(observe(codes, y), GpHyper{3.0, 0.01, 0.0, 0.12});
  double worst_interp = 0.0;
  for (std::size_t i = 0; i < codes.size(); ++i) worst_interp = std::max(worst_interp, std::abs(exact.posterior(codes[i]).mean - y[i]));

  return {min_eig >= -1e-8 && worst_post < 1e-8 && worst_interp < 1e-6,
          fmt("min eigenvalue ", min_eig, " (>= -1e-8); posterior vs dense solve ", worst_post,
              " (< 1e-8); noise-free interpolation ", worst_interp, " (< 1e-6)"),
          {}};
}

Outcome bo_vs_random(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  const SearchSpace space = make_space("space3");
  std::vector<double> bo_counts, random_counts;
  Outcome out;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const SeparableObjective f(space, seed);
    const double target = 1.05 * f.optimum();
    const BatchObjective objective = [&](std::span<const ArchCode> codes) {
      std::vector<double> v;
      for (const auto& a : codes) v.push_back(f(a));
      return v;
    };
    BoOptions opts;
    opts.init_count = 20;
    opts.iterations = 300;
    opts.batch_size = 10;
    opts.propose.pool_size = 2000;
    opts.bounds.gamma_steps = 5;
    opts.bounds.ratio_steps = 3;
    opts.bounds.refine_iters = 8;
    opts.seed = seed;
    SearchHistory h;
    double reached = INFINITY;
    run_bo(h, space, objective, opts, [&](std::size_t, std::span<const ArchCode>, std::span<const double> values) {
      const std::size_t base = h.size() - values.size();
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] <= target) {
          reached = static_cast<double>(base + i + 1);
          return true;
        }
      }
      return false;
    });
    const double rnd = geometric_median(f.fraction_within(target));
    bo_counts.push_back(reached);
    random_counts.push_back(rnd);
    out.details.push_back(fmt("seed ", seed, ": optimum ", f.optimum(), ", BO evaluations ", reached,
                              ", random-search median ", rnd));
  }
  const double secs = seconds_since(t0);
  const double bo = median(bo_counts), rnd = median(random_counts);
  out.pass = bo <= 0.5 * rnd && secs < 300.0;
  out.summary = fmt("space3, 10 seeds, median BO evaluations ", bo, " vs random ", rnd, " (need <= 50%), ", secs,
                    " s (< 300)");
  return out;
}

struct Command {
  int code = -1;
  std::map<std::string, std::string> values;
};

Command run_cli(const Context& ctx, const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + ctx.cli.string() + "\" " + args + " >\"" + log.string() + "\" 2>\"" +
                          log.string() + ".err\"";
  const int status = std::system(cmd.c_str());
  Command c;
  c.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) c.values[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return c;
}

Outcome desk_pipeline(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  if (!fs::exists(ctx.cli)) return {false, "CLI binary not found: " + ctx.cli.string(), {}};
  std::vector<double> retrained, shared;
  for (int seed = 1; seed <= 5; ++seed) {
    const fs::path dir = ctx.work / ("desk_seed" + std::to_string(seed));
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path cfg = dir / "desk.cfg";
    std::ofstream(cfg) << "profile = desk\ndata.dir = data\nseed = " << seed << "\ndata.seed = " << seed
                       << "\nsearch.seed = " << seed << '\n';
    auto q = [](const fs::path& p) { return " \"" + p.string() + "\""; };
    const std::string c = " --config" + q(cfg);
    const Command steps[] = {
        run_cli(ctx, "gen-data" + c + " --out" + q(dir / "data"), dir / "gen.log"),
        run_cli(ctx, "train-supernet" + c + " --out" + q(dir / "supernet"), dir / "train.log"),
        run_cli(ctx, "search" + c + " --supernet" + q(dir / "supernet" / "supernet.ckpt") + " --out" + q(dir / "search"),
                dir / "search.log"),
    };
    for (const auto& s : steps) {
      if (s.code != 0) return {false, fmt("seed ", seed, ": pipeline step failed, logs in ", dir.string()), {}};
    }
    const std::string arch = steps[2].values.at("best_arch");
    const Command ret = run_cli(ctx, "retrain" + c + " --arch \"" + arch + "\" --out" + q(dir / "model"),
                                dir / "retrain.log");
    const Command ev = run_cli(ctx, "eval" + c + " --model" + q(dir / "model" / "model.ckpt") + " --trials" +
                                        q(dir / "data" / "trials.tsv") + " --out" + q(dir / "eval.txt"),
                               dir / "eval.log");
    if (ret.code != 0 || ev.code != 0) return {false, fmt("seed ", seed, ": retrain/eval failed, logs in ", dir.string()), {}};
    const double s = std::stod(steps[2].values.at("best_eer"));
    const double r = std::stod(ev.values.at("eer"));
    shared.push_back(s);
    retrained.push_back(r);
    out.details.push_back(fmt("seed ", seed, ": top arch ", arch, ", weight-sharing EER ", s, ", retrained EER ", r,
                              ", minDCF(0.01) ", ev.values.at("dcf_0.01")));
  }
  const double secs = seconds_since(t0);
  const double mr = median(retrained), ms = median(shared);
  out.pass = mr <= 0.05 && mr <= ms && secs < 1800.0;
  out.summary = fmt("5 seeds, median retrained EER ", mr, " (<= 0.05), median weight-sharing EER ", ms,
                    " (retrained <= shared), ", secs, " s (< 1800)");
  return out;
}

Outcome presets(const Context&) {
  NetConfig cfg;
  cfg.bottleneck_ratio = 0.25;
  bool ok = true;
  Outcome out;
  for (const char* name : {"speechnas3", "speechnas4", "speechnas5"}) {
    const ArchCode a = preset(name);
    const bool valid = is_valid(a, make_space(preset_space(name)));
    const auto dims = layer_input_dims(cfg, a);
    bool dense = dims.size() == 19;
    std::size_t width = cfg.stem_channels;
    for (std::size_t l = 0; dense && l < 18; ++l) {
      dense = dims[l] == width;
      width += static_cast<std::size_t>(a[l].cdim);
    }
    const Network net(cfg, {a.begin(), a.end()}, 0);
    dense = dense && dims[18] == width && net.output_capacity() == width;
    ok = ok && valid && dense;
    out.details.push_back(fmt(name, " in ", preset_space(name), ": valid ", valid ? "yes" : "no", ", dense shapes ",
                              dense ? "yes" : "no", ", output width ", width, ", parameters ",
                              count_params(a, cfg, false)));
  }
  const double m = static_cast<double>(count_params(preset("speechnas5"), cfg, false));
  const double rel = (m - 4.3e6) / 4.3e6;
  ok = ok && std::abs(rel) <= 0.25;
  NetConfig wide = cfg;
  wide.bottleneck_ratio = 2.0;
  const double with_2c = static_cast<double>(count_params(preset("speechnas5"), wide, false));
  out.details.push_back(fmt("divergence: bottleneck width 0.25*c; with width 2*c the count would be ",
                            std::setprecision(8), with_2c));
  out.details.push_back(fmt("divergence: embedding batch norm adds ", 2 * cfg.embedding_dim,
                            " scalars; BN scale/shift counted, running statistics not"));
  out.details.push_back(fmt("divergence: stem ", cfg.stem_kernel, "x", cfg.input_dim, "->", cfg.stem_channels,
                            ", branch kernel ", cfg.branch_kernel, ", embedding ", cfg.embedding_dim,
                            "; the reference layer recipe is unspecified"));
  out.pass = ok;
  out.summary = fmt("presets valid with dense shapes; speechnas5 parameters (classifier excluded) ",
                    std::setprecision(8), m, " vs 4.3M, ", std::setprecision(3), 100.0 * rel, "% (within +-25%)");
  return out;
}

Outcome uniform_sampling(const Context&) {
  const SearchSpace full = make_space("full");
  std::mt19937_64 rng(2024);
  std::vector<std::vector<double>> counts(18, std::vector<double>(16, 0.0));
  for (int n = 0; n < 16000; ++n) {
    const ArchCode a = sample_uniform(full, rng);
    for (std::size_t l = 0; l < 18; ++l) counts[l][full.candidate_index(a[l])] += 1.0;
  }
  const boost::math::chi_squared dist(15);
  double min_p = 1.0;
  for (const auto& row : counts) {
    double chi = 0.0;
    for (double c : row) chi += (c - 1000.0) * (c - 1000.0) / 1000.0;
    min_p = std::min(min_p, boost::math::cdf(boost::math::complement(dist, chi)));
  }
  return {min_p > 0.01, fmt("16000 draws, 18 slots x 16 candidates, smallest chi-square p ", min_p, " (> 0.01)"), {}};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speechnas acceptance checks"};
  std::vector<int> only;
  Context ctx;
#ifdef SPEECHNAS_CLI_PATH
  ctx.cli = SPEECHNAS_CLI_PATH;
#endif
  ctx.work = fs::temp_directory_path() / "speechnas_acceptance";
  app.add_option("--criterion", only, "run only these criteria (1-11)")->check(CLI::Range(1, 11));
  app.add_option("--cli", ctx.cli, "path to the speechnas binary");
  app.add_option("--work", ctx.work, "scratch directory");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "gradient suite", gradient_suite},
      {2, "statistics pooling oracle", stats_pool_oracle},
      {3, "loss identities", loss_identities},
      {4, "metric oracle", metric_oracle},
      {5, "weight-sharing isolation", isolation},
      {6, "instantiation equivalence", instantiation},
      {7, "GP correctness", gp_correctness},
      {8, "BO beats random", bo_vs_random},
      {9, "end-to-end desk pipeline", desk_pipeline},
      {10, "preset consistency", presets},
      {11, "uniform sampling", uniform_sampling},
  };
  fs::create_directories(ctx.work);
  bool all = true;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what(), {}};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.summary << '\n';
    for (const auto& d : o.details) std::cout << "    " << d << '\n';
    std::cout.flush();
  }
  return all ? 0 : 1;
}
