#pragma once

#include "bagknot/core/array_io.hpp"
#include "bagknot/core/error.hpp"
#include "bagknot/core/kv_config.hpp"
#include "bagknot/core/random.hpp"

#include <string>
#include <vector>

namespace bagknot::encoder {

struct SaLevel {
  int centroids = 0;
  double radius = 0.0;
  int neighbors = 0;
  std::vector<int> widths;
};

struct EncoderConfig {
  int d = 512;
  std::vector<SaLevel> sa_levels{{512, 0.2, 32, {64, 64, 128}}, {128, 0.4, 64, {128, 128, 256}}};
  // one entry per set-abstraction level, deepest first
  std::vector<std::vector<int>> fp_widths{{256, 256}, {128, 128, 128}};
  // hidden widths of the per-point head; the output layer has width d
  std::vector<int> head_widths{256};
  double tau = 0.07;
  int m = 150;
  double r_excl = 0.05;
  std::string optimizer = "sgd";
  double lr = 1e-3;
  double momentum = 0.9;
  int batch_size = 16;
  int epochs = 20;
  std::uint64_t seed = 0;

  /// Reduced configuration used by the automated tests and the desk-scale
  /// experiment.
  static EncoderConfig desk() {
    EncoderConfig c;
    c.d = 64;
    c.sa_levels = {{128, 0.2, 16, {16, 16, 32}}, {32, 0.4, 32, {32, 32, 64}}};
    c.fp_widths = {{64, 64}, {32, 32, 32}};
    c.head_widths = {64};
    return c;
  }

  void validate() const {
    if (d < 8) throw ConfigError("encoder: d must be at least 8");
    if (!(tau > 0.0)) throw ConfigError("encoder: tau must be positive");
    if (m < 1) throw ConfigError("encoder: m must be at least 1");
    if (!(r_excl >= 0.0)) throw ConfigError("encoder: r_excl must be non-negative");
    if (sa_levels.empty()) throw ConfigError("encoder: need at least one set-abstraction level");
    if (fp_widths.size() != sa_levels.size()) {
      throw ConfigError("encoder: need one feature-propagation block per set-abstraction level");
    }
    double prev = 0.0;
    for (const auto& l : sa_levels) {
      if (l.centroids < 1 || l.neighbors < 1 || l.widths.empty()) {
        throw ConfigError("encoder: set-abstraction levels need centroids, neighbors and widths");
      }
      if (!(l.radius > prev)) throw ConfigError("encoder: radii must be strictly increasing");
      prev = l.radius;
    }
    for (const auto& w : fp_widths)
      if (w.empty()) throw ConfigError("encoder: empty feature-propagation block");
    for (int w : head_widths)
      if (w < 1) throw ConfigError("encoder: widths must be positive");
    if (optimizer != "sgd" && optimizer != "adam") throw ConfigError("encoder: optimizer must be sgd or adam");
    if (!(lr > 0.0) || batch_size < 1 || epochs < 0) throw ConfigError("encoder: invalid optimizer settings");
  }

  /// Architecture and objective fields; training schedule excluded.
  io::json architecture_json() const {
    io::json sa = io::json::array();
    for (const auto& l : sa_levels)
      sa.push_back({{"centroids", l.centroids}, {"radius", l.radius}, {"neighbors", l.neighbors}, {"widths", l.widths}});
    return {{"d", d}, {"sa_levels", sa}, {"fp_widths", fp_widths}, {"head_widths", head_widths}};
  }

  io::json to_json() const {
    auto j = architecture_json();
    j["tau"] = tau;
    j["m"] = m;
    j["r_excl"] = r_excl;
    j["optimizer"] = optimizer;
    j["lr"] = lr;
    j["momentum"] = momentum;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["seed"] = seed;
    return j;
  }

  static EncoderConfig from_json(const io::json& j) {
    EncoderConfig c;
    c.d = j.at("d").get<int>();
    c.sa_levels.clear();
    for (const auto& l : j.at("sa_levels"))
      c.sa_levels.push_back({l.at("centroids").get<int>(), l.at("radius").get<double>(),
                             l.at("neighbors").get<int>(), l.at("widths").get<std::vector<int>>()});
    c.fp_widths = j.at("fp_widths").get<std::vector<std::vector<int>>>();
    c.head_widths = j.at("head_widths").get<std::vector<int>>();
    c.tau = j.value("tau", c.tau);
    c.m = j.value("m", c.m);
    c.r_excl = j.value("r_excl", c.r_excl);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }

  std::string hash() const { return hex64(Fnv1a().update(architecture_json().dump()).digest()); }

  /// Reads `<prefix>.*` keys over `base`. Level lists are written as
  /// `sa1 = centroids, radius, K, width, width, ...`.
  static EncoderConfig from_kv(const KeyValueConfig& kv, const std::string& prefix, EncoderConfig base) {
    auto key = [&](const char* k) { return prefix + "." + k; };
    auto& c = base;
    c.d = kv.get<int>(key("d"), c.d);
    for (std::size_t l = 0; l < 8; ++l) {
      const auto sa_key = key(("sa" + std::to_string(l + 1)).c_str());
      if (!kv.has(sa_key)) continue;
      const auto v = kv.get_list<double>(sa_key, {});
      if (v.size() < 4) throw ConfigError(sa_key + ": expected centroids, radius, K, widths...");
      SaLevel level{static_cast<int>(v[0]), v[1], static_cast<int>(v[2]), {}};
      for (std::size_t i = 3; i < v.size(); ++i) level.widths.push_back(static_cast<int>(v[i]));
      if (l < c.sa_levels.size()) {
        c.sa_levels[l] = level;
      } else if (l == c.sa_levels.size()) {
        c.sa_levels.push_back(level);
      } else {
        throw ConfigError(sa_key + ": levels must be numbered consecutively");
      }
    }
    if (kv.has(key("levels"))) {
      const auto n = static_cast<std::size_t>(kv.get<int>(key("levels"), 0));
      if (n < 1 || n > c.sa_levels.size()) throw ConfigError(key("levels") + ": out of range");
      c.sa_levels.resize(n);
      c.fp_widths.resize(n, {32});
    }
    for (std::size_t l = 0; l < c.fp_widths.size(); ++l)
      c.fp_widths[l] = kv.get_list<int>(key(("fp" + std::to_string(l + 1)).c_str()), c.fp_widths[l]);
    c.head_widths = kv.get_list<int>(key("head"), c.head_widths);
    c.tau = kv.get<double>(key("tau"), c.tau);
    c.m = kv.get<int>(key("m"), c.m);
    c.r_excl = kv.get<double>(key("r_excl"), c.r_excl);
    c.optimizer = kv.get_string(key("optimizer"), c.optimizer);
    c.lr = kv.get<double>(key("lr"), c.lr);
    c.momentum = kv.get<double>(key("momentum"), c.momentum);
    c.batch_size = kv.get<int>(key("batch_size"), c.batch_size);
    c.epochs = kv.get<int>(key("epochs"), c.epochs);
    c.seed = kv.get<std::uint64_t>(key("seed"), c.seed);
    c.validate();
    return c;
  }
};

}  // namespace bagknot::encoder
