#pragma once

#include "bagknot/bagsim/deformation.hpp"
#include "bagknot/core/kv_config.hpp"
#include "bagknot/encoder/config.hpp"
#include "bagknot/policy/config.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <vector>

namespace bagknot::harness {

using bagsim::Family;

inline std::vector<Family> parse_families(const std::vector<std::string>& names) {
  std::vector<Family> out;
  for (const auto& n : names) out.push_back(bagsim::parse_family(n));
  return out;
}

inline std::vector<std::string> family_names(const std::vector<Family>& fs) {
  std::vector<std::string> out;
  for (auto f : fs) out.push_back(bagsim::to_string(f));
  return out;
}

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::vector<int> seen_templates{0, 1, 2, 3, 4, 5};
  std::vector<int> unseen_templates{6, 7, 8};
  int eval_templates = 3;  // per split; episodes cycle through the first ones
  std::vector<Family> demo_families{Family::VC, Family::HC};
  std::vector<Family> eval_families{bagsim::kAllFamilies.begin(), bagsim::kAllFamilies.end()};

  // correspondence data for the encoder
  std::vector<Family> encoder_families{bagsim::kAllFamilies.begin(), bagsim::kAllFamilies.end()};
  int corpus_per_cell = 10;
  int corpus_length = 5;
  int corpus_n_pc = 1024;
  double p_m = 0.001;
  bool cross_template = true;

  // demonstrations and evaluation
  int demos = 54;
  int episode_length = 160;
  int n_pc = 4096;
  int n_enc = 1024;
  int eval_episodes = 9;

  encoder::EncoderConfig encoder = default_encoder();
  policy::PolicyConfig policy = default_policy();

  static encoder::EncoderConfig default_encoder() {
    auto c = encoder::EncoderConfig::desk();
    c.lr = 1e-2;
    c.epochs = 12;
    return c;
  }

  static policy::PolicyConfig default_policy() {
    auto c = policy::PolicyConfig::desk();
    c.D = 64;
    c.layers = 2;
    c.lr = 2e-3;
    c.epochs = 100;
    return c;
  }

  void validate() const {
    if (seen_templates.empty() || unseen_templates.empty()) throw ConfigError("experiment: template splits must be non-empty");
    std::set<int> seen(seen_templates.begin(), seen_templates.end());
    for (int t : unseen_templates)
      if (seen.count(t) != 0) throw ConfigError("experiment: template " + std::to_string(t) + " is in both splits");
    if (demo_families.empty()) throw ConfigError("experiment: demo families must be non-empty");
    if (eval_families.empty()) throw ConfigError("experiment: eval families must be non-empty");
    if (encoder_families.empty()) throw ConfigError("experiment: encoder families must be non-empty");
    if (eval_templates < 1) throw ConfigError("experiment: eval_templates must be at least 1");
    if (demos < 1 || eval_episodes < 1) throw ConfigError("experiment: demo and episode counts must be positive");
    if (corpus_per_cell < 1 || corpus_length < 2) throw ConfigError("experiment: invalid corpus shape");
    if (!(p_m > 0.0 && p_m <= 1.0)) throw ConfigError("experiment: p_m must be in (0, 1]");
    if (episode_length < 8 || n_pc < 64 || n_enc < 64 || n_enc > n_pc) {
      throw ConfigError("experiment: need episode_length >= 8 and 64 <= n_enc <= n_pc");
    }
    encoder.validate();
    policy.validate();
  }

  /// Templates used for evaluation in one split.
  std::vector<int> eval_split(bool unseen) const {
    const auto& all = unseen ? unseen_templates : seen_templates;
    return {all.begin(), all.begin() + std::min<std::ptrdiff_t>(eval_templates, static_cast<std::ptrdiff_t>(all.size()))};
  }

  io::json to_json() const {
    return {{"seed", seed},
            {"seen_templates", seen_templates},
            {"unseen_templates", unseen_templates},
            {"eval_templates", eval_templates},
            {"demo_families", family_names(demo_families)},
            {"eval_families", family_names(eval_families)},
            {"encoder_families", family_names(encoder_families)},
            {"corpus_per_cell", corpus_per_cell},
            {"corpus_length", corpus_length},
            {"corpus_n_pc", corpus_n_pc},
            {"p_m", p_m},
            {"cross_template", cross_template},
            {"demos", demos},
            {"episode_length", episode_length},
            {"n_pc", n_pc},
            {"n_enc", n_enc},
            {"eval_episodes", eval_episodes},
            {"encoder", encoder.to_json()},
            {"policy", policy.to_json()}};
  }

  static ExperimentConfig from_kv(const KeyValueConfig& kv) {
    ExperimentConfig c;
    c.seed = kv.get<std::uint64_t>("seed", c.seed);
    c.seen_templates = kv.get_list<int>("templates.seen", c.seen_templates);
    c.unseen_templates = kv.get_list<int>("templates.unseen", c.unseen_templates);
    c.eval_templates = kv.get<int>("eval.templates", c.eval_templates);
    if (kv.has("demo.families")) c.demo_families = parse_families(kv.get_list<std::string>("demo.families", {}));
    if (kv.has("eval.families")) c.eval_families = parse_families(kv.get_list<std::string>("eval.families", {}));
    if (kv.has("corpus.families")) c.encoder_families = parse_families(kv.get_list<std::string>("corpus.families", {}));
    c.corpus_per_cell = kv.get<int>("corpus.per_cell", c.corpus_per_cell);
    c.corpus_length = kv.get<int>("corpus.length", c.corpus_length);
    c.corpus_n_pc = kv.get<int>("corpus.n_pc", c.corpus_n_pc);
    c.p_m = kv.get<double>("pairs.p_m", c.p_m);
    c.cross_template = kv.get<bool>("pairs.cross_template", c.cross_template);
    c.demos = kv.get<int>("demo.count", c.demos);
    c.episode_length = kv.get<int>("episode.length", c.episode_length);
    c.n_pc = kv.get<int>("episode.n_pc", c.n_pc);
    c.n_enc = kv.get<int>("episode.n_enc", c.n_enc);
    c.eval_episodes = kv.get<int>("eval.episodes", c.eval_episodes);
    c.encoder = encoder::EncoderConfig::from_kv(kv, "encoder", c.encoder);
    c.policy = policy::PolicyConfig::from_kv(kv, "policy", c.policy);
    kv.reject_unread();
    c.validate();
    return c;
  }

  static ExperimentConfig from_file(const std::filesystem::path& path) {
    return from_kv(KeyValueConfig::from_file(path));
  }
};

}  // namespace bagknot::harness
