#pragma once

#include "bagknot/core/array_io.hpp"
#include "bagknot/core/error.hpp"
#include "bagknot/core/kv_config.hpp"
#include "bagknot/core/random.hpp"

#include <string>

namespace bagknot::policy {

struct PolicyConfig {
  int D = 256;
  int layers = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int H = 16;
  int h_exec = 8;
  int K = 100;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  double lr = 1e-3;
  int batch_size = 64;
  int epochs = 100;
  double grad_clip = 1.0;
  bool cosine_lr = true;     // decay the learning rate to zero over training
  double ema_decay = 0.999;  // 0 disables weight averaging
  std::uint64_t seed = 0;

  /// Reduced configuration for the automated tests. D stays above the 26
  /// action dimensions so each token can carry a full noise estimate.
  static PolicyConfig desk() {
    PolicyConfig c;
    c.D = 32;
    c.layers = 1;
    return c;
  }

  void validate() const {
    if (D < 4 || D % 2 != 0 || layers < 1 || heads < 1 || D % heads != 0 || mlp_ratio < 1) {
      throw ConfigError("policy: invalid transformer dimensions");
    }
    if (H < 1 || h_exec < 1 || h_exec > H) throw ConfigError("policy: need 1 <= h_exec <= H");
    if (K < 1) throw ConfigError("policy: K must be at least 1");
    if (!(lr > 0.0) || batch_size < 1 || epochs < 0 || !(grad_clip > 0.0) || !(ema_decay >= 0.0 && ema_decay < 1.0)) {
      throw ConfigError("policy: invalid optimizer settings");
    }
  }

  io::json architecture_json() const {
    return {{"D", D}, {"layers", layers}, {"heads", heads}, {"mlp_ratio", mlp_ratio}, {"H", H}};
  }

  io::json to_json() const {
    auto j = architecture_json();
    j["h_exec"] = h_exec;
    j["K"] = K;
    j["beta_min"] = beta_min;
    j["beta_max"] = beta_max;
    j["lr"] = lr;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["grad_clip"] = grad_clip;
    j["cosine_lr"] = cosine_lr;
    j["ema_decay"] = ema_decay;
    j["seed"] = seed;
    return j;
  }

  static PolicyConfig from_json(const io::json& j) {
    PolicyConfig c;
    c.D = j.at("D").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.H = j.at("H").get<int>();
    c.h_exec = j.value("h_exec", c.h_exec);
    c.K = j.value("K", c.K);
    c.beta_min = j.value("beta_min", c.beta_min);
    c.beta_max = j.value("beta_max", c.beta_max);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.cosine_lr = j.value("cosine_lr", c.cosine_lr);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }

  std::string hash() const { return hex64(Fnv1a().update(architecture_json().dump()).digest()); }

  static PolicyConfig from_kv(const KeyValueConfig& kv, const std::string& prefix, PolicyConfig c) {
    auto key = [&](const char* k) { return prefix + "." + k; };
    c.D = kv.get<int>(key("D"), c.D);
    c.layers = kv.get<int>(key("layers"), c.layers);
    c.heads = kv.get<int>(key("heads"), c.heads);
    c.mlp_ratio = kv.get<int>(key("mlp_ratio"), c.mlp_ratio);
    c.H = kv.get<int>(key("H"), c.H);
    c.h_exec = kv.get<int>(key("h_exec"), c.h_exec);
    c.K = kv.get<int>(key("K"), c.K);
    c.beta_min = kv.get<double>(key("beta_min"), c.beta_min);
    c.beta_max = kv.get<double>(key("beta_max"), c.beta_max);
    c.lr = kv.get<double>(key("lr"), c.lr);
    c.batch_size = kv.get<int>(key("batch_size"), c.batch_size);
    c.epochs = kv.get<int>(key("epochs"), c.epochs);
    c.grad_clip = kv.get<double>(key("grad_clip"), c.grad_clip);
    c.cosine_lr = kv.get<bool>(key("cosine_lr"), c.cosine_lr);
    c.ema_decay = kv.get<double>(key("ema_decay"), c.ema_decay);
    c.seed = kv.get<std::uint64_t>(key("seed"), c.seed);
    c.validate();
    return c;
  }
};

}  // namespace bagknot::policy
