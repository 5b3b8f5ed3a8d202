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

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

const fs::path& work_dir() {
  static const fs::path d = [] {
    fs::path p = fs::temp_directory_path() / "speechnas_test_cli";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Run run(const std::string& args) {
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = "\""s + SPEECHNAS_CLI_PATH + "\" " + args + " 2>\"" + err.string() + "\"";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> m;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) m[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return m;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path p = work_dir() / name;
  std::ofstream(p) << text;
  return p;
}

const char* kTiny =
    "profile = desk\n"
    "data.dir = data\n"
    "data.num_speakers = 8\n"
    "data.utts_per_speaker = 6\n"
    "data.val_per_speaker = 3\n"
    "data.t_min = 30\n"
    "data.t_max = 40\n"
    "train.epochs = 2\n"
    "train.milestones = 2\n"
    "train.batch_size = 8\n"
    "train.crop_min = 20\n"
    "train.crop_max = 30\n"
    "retrain.epochs = 2\n"
    "retrain.milestones = 2\n"
    "retrain.batch_size = 8\n"
    "retrain.crop_min = 20\n"
    "retrain.crop_max = 30\n"
    "search.init_count = 4\n"
    "search.n1 = 1\n"
    "search.n2 = 2\n"
    "search.pool_size = 100\n"
    "search.bn_batches = 1\n";

}  // namespace

TEST_CASE("cli rejects bad invocations") {
  CHECK(run("").code != 0);
  CHECK(run("no-such-command").code != 0);
  CHECK(run("gen-data --out x").code != 0);
  CHECK(run("train-supernet --config c --out o --loss hinge").code != 0);

  const fs::path bad = write_config("bad.cfg", "profile = desk\ntrain.epoch = 3\n");
  const Run r = run("gen-data --config \"" + bad.string() + "\" --out \"" + (work_dir() / "bad").string() + "\"");
  CHECK(r.code == 1);
  CHECK(r.err.find("train.epoch") != std::string::npos);

  const fs::path nodata = write_config("nodata.cfg", "profile = desk\n");
  const Run t = run("train-supernet --config \"" + nodata.string() + "\" --out \"" +
                    (work_dir() / "nodata").string() + "\"");
  CHECK(t.code == 1);
  CHECK(t.err.find("data.dir") != std::string::npos);

  CHECK(run("report --history \"" + (work_dir() / "missing.tsv").string() + "\" --top 3").code == 1);
}

TEST_CASE("cli runs the whole pipeline") {
  const fs::path dir = work_dir();
  const fs::path cfg = write_config("tiny.cfg", kTiny);
  const std::string c = " --config \"" + cfg.string() + "\"";
  auto q = [](const fs::path& p) { return " \"" + p.string() + "\""; };

  const Run gen = run("gen-data" + c + " --out" + q(dir / "data"));
  REQUIRE(gen.code == 0);
  const auto g = key_values(gen.out);
  CHECK(fs::exists(g.at("manifest")));
  CHECK(fs::exists(g.at("trials")));
  CHECK(fs::exists(dir / "data" / "config.txt"));

  const Run train = run("train-supernet" + c + " --out" + q(dir / "sn") + " --seed 3");
  REQUIRE(train.code == 0);
  const auto t = key_values(train.out);
  CHECK(fs::exists(t.at("checkpoint")));
  CHECK(std::isfinite(std::stod(t.at("final_loss"))));
  CHECK(count_lines(dir / "sn" / "train_log.tsv") >= 2);

  const Run srch = run("search" + c + " --supernet" + q(dir / "sn" / "supernet.ckpt") + " --out" + q(dir / "search"));
  REQUIRE(srch.code == 0);
  const auto s = key_values(srch.out);
  CHECK(s.at("evaluations") == "6");
  CHECK(count_lines(s.at("history")) >= 6);
  const double best = std::stod(s.at("best_eer"));
  CHECK(best >= 0.0);
  CHECK(best <= 1.0);

  const Run rep = run("report --history" + q(dir / "search" / "history.tsv") + " --top 2");
  REQUIRE(rep.code == 0);
  CHECK(rep.out.rfind("1\t" + s.at("best_arch") + "\t", 0) == 0);
  CHECK(std::count(rep.out.begin(), rep.out.end(), '\n') == 2);

  const Run ret = run("retrain" + c + " --arch \"" + s.at("best_arch") + "\" --supernet" +
                      q(dir / "sn" / "supernet.ckpt") + " --out" + q(dir / "model"));
  REQUIRE(ret.code == 0);
  const auto m = key_values(ret.out);
  CHECK(m.at("arch") == s.at("best_arch"));
  CHECK(fs::exists(dir / "model" / "model.ckpt"));
  CHECK(fs::exists(dir / "model" / "report.txt"));

  const Run ev = run("eval" + c + " --model" + q(dir / "model" / "model.ckpt") + " --trials" + q(g.at("trials")) +
                     " --out" + q(dir / "eval.txt"));
  REQUIRE(ev.code == 0);
  const auto e = key_values(ev.out);
  CHECK(e.at("arch") == s.at("best_arch"));
  CHECK(std::stod(e.at("eer")) <= 1.0);
  CHECK(fs::exists(dir / "eval.txt"));
  CHECK(count_lines(dir.string() + "/eval.txt.scores") > 0);

  CHECK(run("retrain" + c + " --arch \"9,9,9\" --out" + q(dir / "bad_model")).code == 1);
}
