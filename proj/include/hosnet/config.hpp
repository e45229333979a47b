#pragma once

// Flat `key = value` configuration with dotted keys. Resolution order is
// defaults <- file <- explicit overrides.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "hosnet/tensor.hpp"

namespace hosnet {

class Config {
 public:
  static Config defaults() {
    Config c;
    c.kv_ = {
        {"data.seed", "0"},
        {"data.identities", "48"},
        {"data.images_per_id", "8"},
        {"data.noise", "1.5"},
        {"data.latent", "16"},
        {"data.height", "16"},
        {"data.width", "8"},
        {"data.channels", "8"},
        {"sle.channels", "16"},
        {"sle.grid_h", "8"},
        {"sle.grid_w", "4"},
        {"sle.conv_blocks", "3"},
        {"sle.transformer_blocks", "2"},
        {"sle.heads", "4"},
        {"hsl.enabled", "true"},
        {"hsl.whitening", "true"},
        {"hsl.hyperedges", "16"},
        {"hsl.eps_cov", "1e-5"},
        {"cfl.enabled", "true"},
        {"cfl.lambda", "1.3"},
        {"cfl.fusion", "gat"},
        {"cfl.parts", "2"},
        {"cfl.gem_p", "3"},
        {"loss.mric", "true"},
        {"loss.mric_sl", "true"},
        {"loss.mric_mid", "true"},
        {"loss.mric_vim", "true"},
        {"loss.triplet_margin", "0.3"},
        {"train.seed", "0"},
        {"train.epochs", "30"},
        {"train.batches_per_epoch", "20"},
        {"train.P", "8"},
        {"train.K", "4"},
        {"train.momentum", "0.9"},
        {"train.lr_divisor", "4"},
        {"train.max_steps", "0"},
        {"train.grad_clip", "2"},
    };
    return c;
  }

  static Config parse(std::istream& in, const std::string& origin = "<stream>") {
    Config c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto t = trim(line);
      if (t.empty()) continue;
      auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
      auto key = trim(t.substr(0, eq));
      auto val = trim(t.substr(eq + 1));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      c.kv_[key] = val;
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse(in, path);
  }

  // Applies every entry of `other`; keys must already exist here.
  void merge(const Config& other) {
    for (auto& [k, v] : other.kv_) set(k, v);
  }

  void set(const std::string& key, const std::string& value) {
    if (!kv_.count(key)) throw ConfigError("unknown config key `" + key + "`");
    kv_[key] = value;
  }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  const std::string& str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing config key `" + key + "`");
    return it->second;
  }

  long long integer(const std::string& key) const {
    const auto& v = str(key);
    try {
      std::size_t pos = 0;
      long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key `" + key + "` expects an integer, got `" + v + "`");
    }
  }

  double real(const std::string& key) const {
    const auto& v = str(key);
    try {
      std::size_t pos = 0;
      double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key `" + key + "` expects a number, got `" + v + "`");
    }
  }

  bool boolean(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError("config key `" + key + "` expects a boolean, got `" + v + "`");
  }

  std::string serialize() const {
    std::ostringstream os;
    for (auto& [k, v] : kv_) os << k << " = " << v << '\n';
    return os.str();
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace hosnet
