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

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "speechnas/errors.hpp"
#include "speechnas/network.hpp"

namespace speechnas {

namespace {

constexpr char kMagic[4] = {'S', 'N', 'C', 'K'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(std::string("checkpoint: truncated ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

std::string shape_token(const Shape& s) {
  std::string t;
  for (std::size_t i = 0; i < s.size(); ++i) t += (i ? "x" : "") + std::to_string(s[i]);
  return t.empty() ? "scalar" : t;
}

std::string manifest_of(const Network& net) {
  const NetConfig& c = net.config();
  std::ostringstream os;
  os << std::setprecision(17);
  os << "kind " << (net.is_candidate() ? "candidate" : "supernet") << '\n';
  os << "config input_dim=" << c.input_dim << " stem_channels=" << c.stem_channels << " stem_kernel=" << c.stem_kernel
     << " branch_kernel=" << c.branch_kernel << " bottleneck_ratio=" << c.bottleneck_ratio
     << " embedding_dim=" << c.embedding_dim << " num_speakers=" << c.num_speakers
     << " classifier=" << to_string(c.classifier) << " bn_momentum=" << c.bn_momentum << " bn_eps=" << c.bn_eps
     << " stats_eps=" << c.stats_eps << '\n';
  os << "capacity " << ArchCode(net.capacity()).to_string() << '\n';
  if (net.space()) {
    const SearchSpace& s = *net.space();
    os << "space layers=" << s.num_layers << " branches=" << join_ints(s.branch_options)
       << " cdims=" << join_ints(s.cdim_options) << " sdims=" << join_ints(s.sdim_options) << '\n';
  }
  if (net.arch()) os << "arch " << net.arch()->to_string() << '\n';
  for (const auto& p : net.params()) {
    os << "param " << p.name << ' ' << (p.trainable ? 1 : 0) << ' ' << shape_token(p.value.shape()) << '\n';
  }
  return os.str();
}

std::map<std::string, std::string> key_values(std::istringstream& line) {
  std::map<std::string, std::string> kv;
  std::string tok;
  while (line >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint manifest: bad token '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

}  // namespace

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  const std::string manifest = manifest_of(net);
  os.write(kMagic, 4);
  write_u32(os, kCheckpointVersion);
  write_u32(os, static_cast<std::uint32_t>(manifest.size()));
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  for (const auto& p : net.params()) {
    for (double v : p.value.data()) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      write_u32(os, bits);
    }
  }
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("checkpoint " + path.string() + ": bad magic at offset 0");
  }
  const std::uint32_t version = read_u32(is, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t mlen = read_u32(is, "manifest length");
  std::string manifest(mlen, '\0');
  if (!is.read(manifest.data(), mlen)) throw FormatError("checkpoint: truncated manifest");

  NetConfig cfg;
  std::vector<SlotChoice> capacity;
  std::optional<SearchSpace> space;
  std::optional<ArchCode> arch;
  struct Entry {
    std::string name;
    bool trainable;
    std::string shape;
  };
  std::vector<Entry> entries;
  std::istringstream ms(manifest);
  std::string line;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "kind") {
      continue;
    } else if (key == "config") {
      auto kv = key_values(ls);
      try {
        cfg.input_dim = std::stoul(kv.at("input_dim"));
        cfg.stem_channels = std::stoul(kv.at("stem_channels"));
        cfg.stem_kernel = std::stoul(kv.at("stem_kernel"));
        cfg.branch_kernel = std::stoul(kv.at("branch_kernel"));
        cfg.bottleneck_ratio = std::stod(kv.at("bottleneck_ratio"));
        cfg.embedding_dim = std::stoul(kv.at("embedding_dim"));
        cfg.num_speakers = std::stoul(kv.at("num_speakers"));
        cfg.classifier = parse_classifier_kind(kv.at("classifier"));
        cfg.bn_momentum = std::stod(kv.at("bn_momentum"));
        cfg.bn_eps = std::stod(kv.at("bn_eps"));
        cfg.stats_eps = std::stod(kv.at("stats_eps"));
      } catch (const std::out_of_range&) {
        throw FormatError("checkpoint manifest: incomplete config line");
      }
    } else if (key == "capacity") {
      std::string code;
      ls >> code;
      const ArchCode c = ArchCode::parse(code);
      capacity.assign(c.begin(), c.end());
    } else if (key == "space") {
      auto kv = key_values(ls);
      SearchSpace s;
      s.num_layers = std::stoul(kv.at("layers"));
      s.branch_options = split_ints(kv.at("branches"));
      s.cdim_options = split_ints(kv.at("cdims"));
      s.sdim_options = split_ints(kv.at("sdims"));
      space = s;
    } else if (key == "arch") {
      std::string code;
      ls >> code;
      arch = ArchCode::parse(code);
    } else if (key == "param") {
      Entry e;
      int tr = 0;
      ls >> e.name >> tr >> e.shape;
      e.trainable = tr != 0;
      entries.push_back(std::move(e));
    } else {
      throw FormatError("checkpoint manifest: unknown line '" + key + "'");
    }
  }
  if (capacity.empty()) throw FormatError("checkpoint manifest: missing capacity");

  Network net(cfg, capacity, 0);
  if (space) net.set_space(*space);
  if (arch) net.set_arch(*arch);
  if (entries.size() != net.params().size()) {
    throw FormatError("checkpoint: manifest lists " + std::to_string(entries.size()) + " tensors, network has " +
                      std::to_string(net.params().size()));
  }
  std::size_t k = 0;
  for (auto& p : net.params()) {
    const Entry& e = entries[k++];
    if (e.name != p.name || e.shape != shape_token(p.value.shape()) || e.trainable != p.trainable) {
      throw FormatError("checkpoint: tensor '" + e.name + "' " + e.shape + " does not match expected '" + p.name +
                        "' " + shape_token(p.value.shape()));
    }
    for (double& v : p.value.data()) {
      const std::uint32_t bits = read_u32(is, "tensor data");
      v = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return net;
}

}  // namespace speechnas
