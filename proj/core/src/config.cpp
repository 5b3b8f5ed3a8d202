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

#include "speechnas/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "speechnas/errors.hpp"

namespace speechnas {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

template <typename T>
std::vector<T> to_list(const std::string& v, T (*conv)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(conv(item));
  }
  return out;
}

int to_int(const std::string& v) { return static_cast<int>(to_size(v)); }

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10 - 2) << v;
  return os.str();
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

struct KeySpec {
  std::string key;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_KEY(name, field, doc) \
  KeySpec{name, doc, [](RunConfig& c, const std::string& v) { c.field = to_size(v); }, \
          [](const RunConfig& c) { return std::to_string(c.field); }}
#define U64_KEY(name, field, doc) \
  KeySpec{name, doc, [](RunConfig& c, const std::string& v) { c.field = to_u64(v); }, \
          [](const RunConfig& c) { return std::to_string(c.field); }}
#define DOUBLE_KEY(name, field, doc) \
  KeySpec{name, doc, [](RunConfig& c, const std::string& v) { c.field = to_double(v); }, \
          [](const RunConfig& c) { return fmt(c.field); }}

std::vector<KeySpec> schedule_keys(const char* section, Schedule RunConfig::*member) {
  const std::string s = section;
  auto key = [&](const char* k) { return s + "." + k; };
  std::vector<KeySpec> out;
  out.push_back({key("lr"), "initial learning rate",
                 [member](RunConfig& c, const std::string& v) { (c.*member).lr = to_double(v); },
                 [member](const RunConfig& c) { return fmt((c.*member).lr); }});
  out.push_back({key("milestones"), "comma-separated 1-based epochs where lr is multiplied by decay",
                 [member](RunConfig& c, const std::string& v) { (c.*member).milestones = to_list<std::size_t>(v, to_size); },
                 [member](const RunConfig& c) { return join((c.*member).milestones); }});
  out.push_back({key("decay"), "lr multiplier at each milestone",
                 [member](RunConfig& c, const std::string& v) { (c.*member).decay = to_double(v); },
                 [member](const RunConfig& c) { return fmt((c.*member).decay); }});
  out.push_back({key("momentum"), "SGD momentum",
                 [member](RunConfig& c, const std::string& v) { (c.*member).momentum = to_double(v); },
                 [member](const RunConfig& c) { return fmt((c.*member).momentum); }});
  out.push_back({key("weight_decay"), "L2 weight decay",
                 [member](RunConfig& c, const std::string& v) { (c.*member).weight_decay = to_double(v); },
                 [member](const RunConfig& c) { return fmt((c.*member).weight_decay); }});
  out.push_back({key("batch_size"), "utterances per mini-batch",
                 [member](RunConfig& c, const std::string& v) { (c.*member).batch_size = to_size(v); },
                 [member](const RunConfig& c) { return std::to_string((c.*member).batch_size); }});
  out.push_back({key("epochs"), "passes over the training utterances",
                 [member](RunConfig& c, const std::string& v) { (c.*member).epochs = to_size(v); },
                 [member](const RunConfig& c) { return std::to_string((c.*member).epochs); }});
  out.push_back({key("crop_min"), "shortest training crop in frames",
                 [member](RunConfig& c, const std::string& v) { (c.*member).crop_min = to_size(v); },
                 [member](const RunConfig& c) { return std::to_string((c.*member).crop_min); }});
  out.push_back({key("crop_max"), "longest training crop in frames",
                 [member](RunConfig& c, const std::string& v) { (c.*member).crop_max = to_size(v); },
                 [member](const RunConfig& c) { return std::to_string((c.*member).crop_max); }});
  return out;
}

const std::vector<KeySpec>& registry() {
  static const std::vector<KeySpec> keys = [] {
    std::vector<KeySpec> k;
    k.push_back({"profile", "base defaults: paper or desk", [](RunConfig&, const std::string&) {},
                 [](const RunConfig& c) { return c.profile; }});
    k.push_back({"seed", "master seed for initialisation, sampling and cropping",
                 [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});

    k.push_back({"space.variant", "space1, space2, space3, full or desk",
                 [](RunConfig& c, const std::string& v) {
                   c.space = make_space(v);
                   c.space_variant = v;
                 },
                 [](const RunConfig& c) { return c.space_variant; }});
    k.push_back({"space.layers", "number of D-TDNN layers",
                 [](RunConfig& c, const std::string& v) { c.space.num_layers = to_size(v); },
                 [](const RunConfig& c) { return std::to_string(c.space.num_layers); }});
    k.push_back({"space.branches", "branch-count options",
                 [](RunConfig& c, const std::string& v) { c.space.branch_options = to_list<int>(v, to_int); },
                 [](const RunConfig& c) { return join(c.space.branch_options); }});
    k.push_back({"space.cdims", "D-TDNN feature-width options",
                 [](RunConfig& c, const std::string& v) { c.space.cdim_options = to_list<int>(v, to_int); },
                 [](const RunConfig& c) { return join(c.space.cdim_options); }});
    k.push_back({"space.sdims", "channel-selection width options",
                 [](RunConfig& c, const std::string& v) { c.space.sdim_options = to_list<int>(v, to_int); },
                 [](const RunConfig& c) { return join(c.space.sdim_options); }});

    k.push_back({"data.dir", "directory written by gen-data",
                 [](RunConfig& c, const std::string& v) { c.data_dir = v; },
                 [](const RunConfig& c) { return c.data_dir.string(); }});
    k.push_back(SIZE_KEY("data.num_speakers", data.num_speakers, "synthetic speakers"));
    k.push_back(SIZE_KEY("data.utts_per_speaker", data.utts_per_speaker, "utterances per speaker"));
    k.push_back(SIZE_KEY("data.val_per_speaker", data.val_per_speaker, "utterances per speaker held out for validation"));
    k.push_back(SIZE_KEY("data.feature_dim", data.feature_dim, "feature channels per frame"));
    k.push_back(SIZE_KEY("data.t_min", data.t_min, "shortest utterance in frames"));
    k.push_back(SIZE_KEY("data.t_max", data.t_max, "longest utterance in frames"));
    k.push_back(DOUBLE_KEY("data.scale", data.scale, "prototype scale"));
    k.push_back(DOUBLE_KEY("data.rho", data.rho, "AR(1) coefficient"));
    k.push_back(DOUBLE_KEY("data.noise", data.noise, "innovation standard deviation"));
    k.push_back(U64_KEY("data.seed", data.seed, "generator seed"));

    k.push_back(SIZE_KEY("net.stem_channels", net.stem_channels, "stem convolution width"));
    k.push_back(SIZE_KEY("net.stem_kernel", net.stem_kernel, "stem convolution kernel"));
    k.push_back(SIZE_KEY("net.branch_kernel", net.branch_kernel, "branch convolution kernel"));
    k.push_back(DOUBLE_KEY("net.bottleneck_ratio", net.bottleneck_ratio, "bottleneck width as a multiple of c"));
    k.push_back(SIZE_KEY("net.embedding_dim", net.embedding_dim, "speaker embedding size"));
    k.push_back(DOUBLE_KEY("net.bn_momentum", net.bn_momentum, "running-statistics momentum"));

    for (auto& s : schedule_keys("train", &RunConfig::train)) k.push_back(std::move(s));
    k.push_back({"train.loss", "supernet loss: ce or aam_mhe",
                 [](RunConfig& c, const std::string& v) {
                   if (v != "ce" && v != "aam_mhe") throw ConfigError("train.loss must be ce or aam_mhe");
                   c.supernet_loss = v;
                 },
                 [](const RunConfig& c) { return c.supernet_loss; }});

    for (auto& s : schedule_keys("retrain", &RunConfig::retrain)) k.push_back(std::move(s));
    k.push_back({"retrain.warm_start", "initialise the candidate from supernet slices when a supernet is given",
                 [](RunConfig& c, const std::string& v) { c.retrain_warm_start = to_bool(v); },
                 [](const RunConfig& c) { return std::string(c.retrain_warm_start ? "true" : "false"); }});

    k.push_back(DOUBLE_KEY("loss.s_scale", loss.scale, "AAM scale s"));
    k.push_back(DOUBLE_KEY("loss.margin", loss.margin, "AAM margin m in radians"));
    k.push_back(DOUBLE_KEY("loss.mhe_lambda", loss.lambda, "MHE weight"));

    k.push_back(SIZE_KEY("search.n1", search.n1, "BO iterations"));
    k.push_back(SIZE_KEY("search.n2", search.n2, "candidates per iteration"));
    k.push_back(SIZE_KEY("search.init_count", search.init_count, "initial random evaluations"));
    k.push_back(SIZE_KEY("search.pool_size", search.pool_size, "uniform samples in the acquisition pool"));
    k.push_back(DOUBLE_KEY("search.mutation_rate", search.mutation_rate, "per-slot mutation probability"));
    k.push_back(SIZE_KEY("search.num_parents", search.num_parents, "best codes mutated into the pool"));
    k.push_back(U64_KEY("search.seed", search.seed, "search seed"));
    k.push_back(SIZE_KEY("search.bn_batches", search.bn_batches, "batches for BN re-estimation per evaluated path"));

    k.push_back(SIZE_KEY("eval.max_frames", eval_max_frames, "frames per utterance when embedding; 0 keeps all"));
    return k;
  }();
  return keys;
}

const KeySpec* find_key(std::string_view key) {
  for (const auto& k : registry()) {
    if (key == k.key) return &k;
  }
  return nullptr;
}

}  // namespace

double Schedule::lr_at(std::size_t epoch) const {
  double lr_now = lr;
  for (std::size_t m : milestones) {
    if (epoch >= m) lr_now *= decay;
  }
  return lr_now;
}

void Schedule::check(std::string_view section) const {
  const std::string s(section);
  if (!(lr > 0.0)) throw ConfigError(s + ".lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError(s + ".momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError(s + ".weight_decay must be non-negative");
  if (!(decay > 0.0)) throw ConfigError(s + ".decay must be positive");
  if (batch_size == 0) throw ConfigError(s + ".batch_size must be positive");
  if (epochs == 0) throw ConfigError(s + ".epochs must be positive");
  if (crop_min < 2 || crop_max < crop_min) throw ConfigError(s + ": need 2 <= crop_min <= crop_max");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] == 0) throw ConfigError(s + ".milestones are 1-based");
    if (i > 0 && milestones[i] <= milestones[i - 1]) throw ConfigError(s + ".milestones must be strictly increasing");
  }
}

RunConfig RunConfig::profile_defaults(std::string_view name) {
  RunConfig c;
  c.space = make_space("full");
  c.net.bottleneck_ratio = 0.25;
  if (name == "paper") {
    c.profile = "paper";
    return c;
  }
  if (name != "desk") throw ConfigError("unknown profile: " + std::string(name));
  c.profile = "desk";
  c.space_variant = "desk";
  c.space = make_space("desk");
  c.data.num_speakers = 32;
  c.data.utts_per_speaker = 20;
  c.data.val_per_speaker = 5;
  c.data.feature_dim = 30;
  c.data.t_min = 60;
  c.data.t_max = 100;
  c.data.noise = 0.5;
  c.net.stem_channels = 32;
  c.net.bottleneck_ratio = 1.0;
  c.net.embedding_dim = 64;
  c.train.lr = 0.01;
  c.train.milestones = {8, 11};
  c.train.batch_size = 32;
  c.train.epochs = 12;
  c.train.crop_min = 40;
  c.train.crop_max = 60;
  c.retrain = c.train;
  c.retrain.epochs = 16;
  c.retrain.milestones = {10, 14};
  c.search.n1 = 10;
  c.search.n2 = 8;
  c.search.init_count = 40;
  c.search.pool_size = 1000;
  c.search.bn_batches = 4;
  return c;
}

RunConfig RunConfig::parse(std::string_view text, std::string_view source) {
  struct Line {
    std::size_t number;
    std::string key;
    std::string value;
  };
  std::vector<Line> lines;
  std::map<std::string, std::size_t> seen;
  std::istringstream is{std::string(text)};
  std::string raw;
  std::size_t number = 0;
  const std::string src(source);
  while (std::getline(is, raw)) {
    ++number;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(src + ":" + std::to_string(number) + ": expected `key = value`");
    Line l{number, trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
    if (!find_key(l.key)) throw ConfigError(src + ":" + std::to_string(number) + ": unknown key '" + l.key + "'");
    if (auto [it, fresh] = seen.emplace(l.key, number); !fresh) {
      throw ConfigError(src + ":" + std::to_string(number) + ": duplicate key '" + l.key + "' (first on line " +
                        std::to_string(it->second) + ")");
    }
    lines.push_back(std::move(l));
  }

  std::string profile = "paper";
  for (const auto& l : lines) {
    if (l.key == "profile") profile = l.value;
  }
  RunConfig c = profile_defaults(profile);
  // The variant replaces the whole space, so it goes before per-field overrides.
  std::stable_partition(lines.begin(), lines.end(), [](const Line& l) { return l.key == "space.variant"; });
  for (const auto& l : lines) {
    try {
      find_key(l.key)->set(c, l.value);
    } catch (const ConfigError& e) {
      throw ConfigError(src + ":" + std::to_string(l.number) + ": " + l.key + ": " + e.what());
    }
  }
  c.check();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& k : registry()) os << k.key << " = " << k.get(*this) << '\n';
  return os.str();
}

void RunConfig::check() const {
  space.check();
  data.check();
  train.check("train");
  retrain.check("retrain");
  if (net.stem_channels == 0 || net.embedding_dim == 0 || net.stem_kernel == 0 || net.branch_kernel == 0) {
    throw ConfigError("net dimensions must be positive");
  }
  if (!(net.bottleneck_ratio > 0.0)) throw ConfigError("net.bottleneck_ratio must be positive");
  if (search.n2 == 0) throw ConfigError("search.n2 must be positive");
  if (search.init_count < 2) throw ConfigError("search.init_count must be at least 2");
  if (!(search.mutation_rate >= 0.0 && search.mutation_rate <= 1.0)) {
    throw ConfigError("search.mutation_rate must be in [0,1]");
  }
  if (!(loss.scale > 0.0)) throw ConfigError("loss.s_scale must be positive");
}

std::vector<ConfigKeyDoc> config_keys() {
  std::vector<ConfigKeyDoc> out;
  for (const auto& k : registry()) out.push_back({k.key, k.doc});
  return out;
}

}  // namespace speechnas
