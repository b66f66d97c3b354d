#pragma once

// Plain-text experiment configuration: one `key=value` per line, '#'
// comments. parse(render(c)) == c.

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "adagan/tensor.hpp"

namespace adagan {

struct ExperimentConfig {
  std::string arch = "Baseline";
  std::string profile = "tiny";
  std::string dataset = "shapes";
  int64_t iters = 2000;
  uint64_t seed = 0;
  int64_t batch = 64;
  int k_adaptive = 0;  // 0: take K from the architecture name
  std::string out = "runs/out";
  int64_t log_every = 500;
  int64_t snapshot_every = 500;
  int64_t data_n = 3200;
  int threads = 0;  // 0: hardware default
  std::string g_loss = "non-saturating";

  bool operator==(const ExperimentConfig&) const = default;
};

inline std::string render_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "arch=" << c.arch << '\n';
  os << "batch=" << c.batch << '\n';
  os << "data_n=" << c.data_n << '\n';
  os << "dataset=" << c.dataset << '\n';
  os << "g_loss=" << c.g_loss << '\n';
  os << "iters=" << c.iters << '\n';
  os << "k_adaptive=" << c.k_adaptive << '\n';
  os << "log_every=" << c.log_every << '\n';
  os << "out=" << c.out << '\n';
  os << "profile=" << c.profile << '\n';
  os << "seed=" << c.seed << '\n';
  os << "snapshot_every=" << c.snapshot_every << '\n';
  os << "threads=" << c.threads << '\n';
  return os.str();
}

inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto to_i64 = [&](const std::string& s) -> int64_t {
    try {
      size_t used = 0;
      int64_t v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config line " + std::to_string(lineno) + ": bad integer '" + s + "'");
    }
  };
  auto to_u64 = [&](const std::string& s) -> uint64_t {
    try {
      size_t used = 0;
      uint64_t v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config line " + std::to_string(lineno) + ": bad integer '" + s + "'");
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r')) {
      line.pop_back();
    }
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line = line.substr(start);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "arch") c.arch = value;
    else if (key == "profile") c.profile = value;
    else if (key == "dataset") c.dataset = value;
    else if (key == "iters") c.iters = to_i64(value);
    else if (key == "seed") c.seed = to_u64(value);
    else if (key == "batch") c.batch = to_i64(value);
    else if (key == "k_adaptive") c.k_adaptive = static_cast<int>(to_i64(value));
    else if (key == "out") c.out = value;
    else if (key == "log_every") c.log_every = to_i64(value);
    else if (key == "snapshot_every") c.snapshot_every = to_i64(value);
    else if (key == "data_n") c.data_n = to_i64(value);
    else if (key == "threads") c.threads = static_cast<int>(to_i64(value));
    else if (key == "g_loss") c.g_loss = value;
    else throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  return c;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

}  // namespace adagan
