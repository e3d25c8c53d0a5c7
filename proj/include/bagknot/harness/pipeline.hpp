#pragma once

// Experiment orchestration. Each stage writes its artifacts under
// <root>/<stage>/ together with stage.json, which records the stage seed, the
// settings it depends on and the output hashes of its upstream stages. A
// stage whose record still matches is skipped, so a run resumes after the
// last intact stage.

#include "bagknot/corrdata/dataset.hpp"
#include "bagknot/encoder/train.hpp"
#include "bagknot/harness/artifacts.hpp"
#include "bagknot/harness/config.hpp"
#include "bagknot/harness/table.hpp"
#include "bagknot/policy/rollout.hpp"
#include "bagknot/policy/train.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <set>

namespace bagknot::harness {

using Logger = std::function<void(const std::string&)>;

/// Output root: explicit path, else $BAGKNOT_OUT, else ./bagknot_out.
inline fs::path output_root(const std::optional<fs::path>& explicit_root = std::nullopt) {
  if (explicit_root) return *explicit_root;
  if (const char* env = std::getenv("BAGKNOT_OUT"); env != nullptr && *env != '\0') return env;
  return "bagknot_out";
}

inline std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("missing file: " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(Fnv1a().update(bytes).digest());
}

inline std::uint64_t task_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, {0x7A5C}); }

inline ReferenceSpec reference_spec(const ExperimentConfig& cfg) {
  return {cfg.seen_templates.front(), cfg.n_enc, derive_seed(cfg.seed, {0x4EF})};
}

/// Deformation seed of evaluation episode i of a family. Independent of the
/// template and the method, so splits and ablation rows are paired.
inline std::uint64_t eval_episode_seed(const ExperimentConfig& cfg, bagsim::Family f, int i) {
  return derive_seed(cfg.seed, {0xE7A1, static_cast<std::uint64_t>(f), static_cast<std::uint64_t>(i)});
}

struct EvalOptions {
  std::string method = "ours";
  policy::RolloutOptions rollout;
  bool seen = true;
  bool unseen = true;
};

struct SplitTables {
  SuccessTable seen{"seen templates", {}};
  SuccessTable unseen{"unseen templates", {}};

  bool operator==(const SplitTables&) const = default;

  io::json to_json() const { return {{"seen", seen.to_json()}, {"unseen", unseen.to_json()}}; }
  static SplitTables from_json(const io::json& j) {
    return {SuccessTable::from_json(j.at("seen")), SuccessTable::from_json(j.at("unseen"))};
  }
};

/// Runs eval_episodes rollouts per (split, family) and tallies success.
inline SplitTables eval_matrix(const policy::PolicyWeights& pol, const encoder::EncoderWeights& enc,
                               const matcher::ReferenceSet& ref, const ExperimentConfig& cfg,
                               const EvalOptions& opt = {}, const Logger& log = {}) {
  if (ref.encoder_hash != enc.hash()) throw ConfigError("eval_matrix: reference and encoder checkpoints disagree");
  const auto task = bagsim::sample_task(task_seed(cfg));
  if (opt.rollout.n_enc != cfg.n_enc) throw ConfigError("eval_matrix: rollout n_enc differs from the experiment");
  SplitTables out;
  for (const bool unseen : {false, true}) {
    if (unseen ? !opt.unseen : !opt.seen) continue;
    auto& table = unseen ? out.unseen : out.seen;
    table.row(opt.method);
    const auto templates = cfg.eval_split(unseen);
    std::vector<bagsim::BagTemplate> tmpls;
    for (int t : templates) tmpls.push_back(bagsim::synthesize_template(t));
    for (auto family : cfg.eval_families) {
      int wins = 0;
      for (int i = 0; i < cfg.eval_episodes; ++i) {
        const auto ti = static_cast<std::size_t>(i) % tmpls.size();
        const bagsim::EpisodeSpec spec{templates[ti], family, eval_episode_seed(cfg, family, i), cfg.episode_length,
                                       cfg.n_pc};
        const auto rec = policy::rollout(pol, enc, ref, tmpls[ti], spec, task, opt.rollout, derive_seed(spec.seed, {1}));
        table.record(opt.method, family, rec.success);
        wins += rec.success ? 1 : 0;
      }
      if (log) {
        log(opt.method + " " + (unseen ? "unseen " : "seen ") + bagsim::to_string(family) + ": " + std::to_string(wins) +
            "/" + std::to_string(cfg.eval_episodes));
      }
    }
  }
  return out;
}

/// Sequences of one family subset, renumbered from zero.
inline std::vector<bagsim::Sequence> filter_families(const std::vector<bagsim::Sequence>& seqs,
                                                     const std::vector<bagsim::Family>& keep) {
  std::vector<bagsim::Sequence> out;
  for (const auto& s : seqs)
    if (std::find(keep.begin(), keep.end(), s.family) != keep.end()) out.push_back(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<int>(i);
  return out;
}

inline std::size_t frame_count(const std::vector<bagsim::Sequence>& seqs) {
  std::size_t n = 0;
  for (const auto& s : seqs) n += s.frames.size();
  return n;
}

/// p_m rescaled so a smaller corpus yields the same expected pair count.
inline double matched_pair_rate(double p_m, std::size_t full_frames, std::size_t kept_frames) {
  if (kept_frames < 2) throw InputError("matched_pair_rate: fewer than two frames remain");
  const double full = static_cast<double>(full_frames) * static_cast<double>(full_frames - 1);
  const double kept = static_cast<double>(kept_frames) * static_cast<double>(kept_frames - 1);
  return std::min(1.0, p_m * full / kept);
}

inline std::vector<int> manifest_template_ids(const io::json& manifest, const char* list_key) {
  std::vector<int> ids;
  for (const auto& e : manifest.at(list_key)) ids.push_back(e.at("template_id").get<int>());
  return ids;
}

inline std::function<void(int, double)> epoch_logger(const Logger& log, const std::string& what) {
  return [log, what](int epoch, double loss) {
    if (log) log(what + " epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
  };
}

inline std::uint64_t datagen_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, {0xDA7A}); }
inline std::uint64_t pairs_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, {0x9A12}); }
inline std::uint64_t demos_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, {0xDE40}); }

inline encoder::EncoderConfig encoder_config(const ExperimentConfig& cfg) {
  auto e = cfg.encoder;
  e.seed = derive_seed(cfg.seed, {0xE2C, cfg.encoder.seed});
  return e;
}

inline policy::PolicyConfig policy_config(const ExperimentConfig& cfg) {
  auto p = cfg.policy;
  p.seed = derive_seed(cfg.seed, {0xD17, cfg.policy.seed});
  return p;
}

/// Deformation corpus over the seen templates.
inline void make_corpus(const ExperimentConfig& cfg, const fs::path& out) {
  std::vector<bagsim::BagTemplate> templates;
  for (int t : cfg.seen_templates) templates.push_back(bagsim::synthesize_template(t));
  const auto seed = datagen_seed(cfg);
  bagsim::CorpusSpec spec{cfg.encoder_families, cfg.corpus_per_cell, cfg.corpus_length, cfg.corpus_n_pc, seed};
  bagsim::save_sequences(out, templates, bagsim::generate_corpus(templates, spec), {{"seed", seed}});
}

inline void make_pairs(const ExperimentConfig& cfg, const fs::path& data, const fs::path& out) {
  const auto set = bagsim::load_sequences(data);
  const auto seed = pairs_seed(cfg);
  const auto p = corrdata::build_pairs(set.sequences, cfg.p_m, seed, cfg.cross_template);
  corrdata::save_dataset(corrdata::make_dataset(set.sequences, p, cfg.p_m, seed), out);
}

/// Trains the encoder and writes its checkpoint plus reference.json.
inline encoder::EncoderWeights make_encoder(const ExperimentConfig& cfg, const fs::path& pairs, const fs::path& out,
                                            const Logger& log = {}) {
  const auto w = encoder::train_encoder(corrdata::load_dataset(pairs), encoder_config(cfg), {epoch_logger(log, "encoder")});
  encoder::save_encoder(out, w);
  save_reference(out / "reference.json", reference_spec(cfg), w);
  return w;
}

/// Expert demonstrations on the seen templates, cycling through the
/// demonstration families. Observed keypoints come from the tracker.
inline void make_demos(const ExperimentConfig& cfg, const fs::path& encoder_dir, const fs::path& out) {
  const auto enc = encoder::load_encoder(encoder_dir);
  const auto ref = load_reference(encoder_dir / "reference.json", enc);
  const auto task = bagsim::sample_task(task_seed(cfg));
  const auto seed = demos_seed(cfg);
  std::vector<DemoRecord> records;
  const auto nf = cfg.demo_families.size();
  for (int i = 0; i < cfg.demos; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    DemoRecord r;
    r.family = cfg.demo_families[iu % nf];
    r.template_id = cfg.seen_templates[(iu / nf) % cfg.seen_templates.size()];
    const auto tmpl = bagsim::synthesize_template(r.template_id);
    for (int attempt = 0;; ++attempt) {
      if (attempt == 20) throw DemoInfeasibleError("demo " + std::to_string(i) + ": no feasible episode in 20 draws");
      r.episode_seed = derive_seed(seed, {iu, static_cast<std::uint64_t>(attempt)});
      const bagsim::EpisodeSpec spec{r.template_id, r.family, r.episode_seed, cfg.episode_length, cfg.n_pc};
      const auto frames = bagsim::episode_frames(tmpl, spec);
      try {
        r.demo = bagsim::expert_demo(std::span<const bagsim::Frame>(frames), task, r.episode_seed);
      } catch (const DemoInfeasibleError&) {
        continue;
      }
      r.demo.observed_keypoints = policy::perceive_episode(frames, enc, ref, matcher::Mode::Track, cfg.n_enc);
      break;
    }
    records.push_back(std::move(r));
  }
  save_demonstrations(out, records, task_seed(cfg), {{"encoder_hash", enc.hash()}});
}

inline policy::PolicyWeights make_policy(const ExperimentConfig& cfg, const fs::path& demos, const fs::path& out,
                                         const Logger& log = {}) {
  const auto set = load_demonstrations(demos);
  auto w = policy::train_policy(set.demonstrations(), policy_config(cfg), {epoch_logger(log, "policy")});
  w.meta["demos_hash"] = file_hash(demos / "manifest.json");
  policy::save_policy(out, w);
  return w;
}

class Experiment {
 public:
  static inline const std::vector<std::string> kStages{"datagen", "pairs", "train-encoder", "demos", "train-policy",
                                                       "eval"};

  Experiment(ExperimentConfig cfg, fs::path root, Logger log = {})
      : cfg_(std::move(cfg)), root_(std::move(root)), log_(std::move(log)) {
    cfg_.validate();
  }

  const ExperimentConfig& config() const { return cfg_; }
  const fs::path& root() const { return root_; }
  fs::path dir(const std::string& stage) const { return root_ / stage; }

  /// Runs every stage in order, skipping the ones already up to date.
  SplitTables run() {
    datagen();
    pairs();
    train_encoder();
    demos();
    train_policy();
    return eval();
  }

  void datagen() {
    io::json settings{{"templates", cfg_.seen_templates},
                      {"families", family_names(cfg_.encoder_families)},
                      {"per_cell", cfg_.corpus_per_cell},
                      {"length", cfg_.corpus_length},
                      {"n_pc", cfg_.corpus_n_pc}};
    stage("datagen", datagen_seed(cfg_), settings, {}, [&](const fs::path& out) { make_corpus(cfg_, out); });
  }

  void pairs() {
    stage("pairs", pairs_seed(cfg_), {{"p_m", cfg_.p_m}, {"cross_template", cfg_.cross_template}}, {"datagen"},
          [&](const fs::path& out) { make_pairs(cfg_, dir("datagen"), out); });
  }

  void train_encoder() {
    const auto ecfg = encoder_config(cfg_);
    stage("train-encoder", ecfg.seed, {{"encoder", ecfg.to_json()}, {"reference", reference_spec(cfg_).to_json()}},
          {"pairs"}, [&](const fs::path& out) { make_encoder(cfg_, dir("pairs"), out, log_); });
  }

  void demos() {
    io::json settings{{"templates", cfg_.seen_templates},
                      {"families", family_names(cfg_.demo_families)},
                      {"count", cfg_.demos},
                      {"length", cfg_.episode_length},
                      {"n_pc", cfg_.n_pc},
                      {"n_enc", cfg_.n_enc},
                      {"task_seed", task_seed(cfg_)}};
    stage("demos", demos_seed(cfg_), settings, {"train-encoder"},
          [&](const fs::path& out) { make_demos(cfg_, dir("train-encoder"), out); });
    check_split_hygiene();
  }

  void train_policy() {
    const auto pcfg = policy_config(cfg_);
    stage("train-policy", pcfg.seed, {{"policy", pcfg.to_json()}}, {"demos"},
          [&](const fs::path& out) { make_policy(cfg_, dir("demos"), out, log_); });
  }

  SplitTables eval() {
    io::json settings{{"episodes", cfg_.eval_episodes},
                      {"eval_templates", cfg_.eval_split(false)},
                      {"eval_unseen", cfg_.eval_split(true)},
                      {"families", family_names(cfg_.eval_families)},
                      {"length", cfg_.episode_length},
                      {"n_pc", cfg_.n_pc},
                      {"n_enc", cfg_.n_enc},
                      {"task_seed", task_seed(cfg_)}};
    stage("eval", cfg_.seed, settings, {"train-encoder", "train-policy"}, [&](const fs::path& out) {
      const auto enc = encoder::load_encoder(dir("train-encoder"));
      const auto ref = load_reference(dir("train-encoder") / "reference.json", enc);
      const auto pol = policy::load_policy(dir("train-policy"));
      EvalOptions opt;
      opt.rollout.n_enc = cfg_.n_enc;
      write_tables(out, eval_matrix(pol, enc, ref, cfg_, opt, log_));
    });
    return SplitTables::from_json(io::read_json(dir("eval") / "manifest.json").at("tables"));
  }

  /// Unseen-template table with rows ours, ours-reidentify and
  /// ours-no-TF-IF-encoder, all on the evaluation episode seeds.
  SuccessTable ablate() {
    run();
    const auto ecfg = encoder_config(cfg_);
    stage("ablate", cfg_.seed, {{"encoder", ecfg.to_json()}}, {"datagen", "train-encoder", "train-policy", "eval"},
          [&](const fs::path& out) {
            const auto enc = encoder::load_encoder(dir("train-encoder"));
            const auto ref = load_reference(dir("train-encoder") / "reference.json", enc);
            const auto pol = policy::load_policy(dir("train-policy"));
            SuccessTable table{"ablations, unseen templates", {}};
            const auto base = SplitTables::from_json(io::read_json(dir("eval") / "manifest.json").at("tables"));
            auto ours = base.unseen.row("ours");
            table.rows.push_back(ours);

            EvalOptions reid;
            reid.method = "ours-reidentify";
            reid.seen = false;
            reid.rollout.mode = matcher::Mode::Reidentify;
            reid.rollout.n_enc = cfg_.n_enc;
            table.rows.push_back(eval_matrix(pol, enc, ref, cfg_, reid, log_).unseen.row(reid.method));

            const auto no_tfif = train_without_tf_if(out, ecfg);
            const auto ref2 = matcher::make_reference(reference_spec(cfg_).frame(), no_tfif);
            EvalOptions abl;
            abl.method = "ours-no-TF-IF-encoder";
            abl.seen = false;
            abl.rollout.n_enc = cfg_.n_enc;
            table.rows.push_back(eval_matrix(pol, no_tfif, ref2, cfg_, abl, log_).unseen.row(abl.method));
            io::write_json(out / "manifest.json", {{"kind", "ablation-table"}, {"table", table.to_json()}});
            log(table.to_text());
          });
    return SuccessTable::from_json(io::read_json(dir("ablate") / "manifest.json").at("table"));
  }

  /// Throws IntegrityError if an unseen template id appears in any training
  /// artifact present under the root.
  void check_split_hygiene() const {
    const std::set<int> unseen(cfg_.unseen_templates.begin(), cfg_.unseen_templates.end());
    auto scan = [&](const fs::path& manifest, const char* list_key) {
      if (!fs::exists(manifest)) return;
      for (int t : manifest_template_ids(io::read_json(manifest), list_key))
        if (unseen.count(t) != 0) {
          throw IntegrityError("split hygiene: unseen template " + std::to_string(t) + " in " + manifest.string());
        }
    };
    scan(dir("datagen") / "manifest.json", "sequences");
    scan(dir("pairs") / "manifest.json", "frames");
    scan(dir("demos") / "manifest.json", "demos");
    scan(dir("ablate") / "pairs-no-tf-if" / "manifest.json", "frames");
    const auto ref = dir("train-encoder") / "reference.json";
    if (fs::exists(ref)) {
      const int t = io::read_json(ref).at("spec").at("template_id").get<int>();
      if (unseen.count(t) != 0) throw IntegrityError("split hygiene: reference uses unseen template " + std::to_string(t));
    }
  }

  /// True when the stage record matches the current settings and inputs.
  bool up_to_date(const std::string& name) const {
    const auto rec = dir(name) / "stage.json";
    if (!fs::exists(rec) || !fs::exists(dir(name) / "manifest.json")) return false;
    const auto j = io::read_json(rec);
    return j.value("output_hash", "") == file_hash(dir(name) / "manifest.json") &&
           j.value("fingerprint", "") == pending_.value(name, "");
  }

 private:
  template <class Body>
  void stage(const std::string& name, std::uint64_t seed, const io::json& settings,
             const std::vector<std::string>& deps, Body&& body) {
    io::json inputs = io::json::object();
    for (const auto& d : deps) {
      const auto rec = dir(d) / "stage.json";
      if (!fs::exists(rec)) throw StageError(name, "upstream stage '" + d + "' has not run");
      inputs[d] = io::read_json(rec).at("output_hash");
    }
    const io::json record_base{{"stage", name}, {"seed", seed}, {"settings", settings}, {"inputs", inputs}};
    pending_[name] = hex64(Fnv1a().update(record_base.dump()).digest());
    if (up_to_date(name)) {
      log("[" + name + "] up to date");
      return;
    }
    log("[" + name + "] running");
    fs::remove_all(dir(name));
    fs::create_directories(dir(name));
    try {
      body(dir(name));
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
    auto record = record_base;
    record["fingerprint"] = pending_[name];
    record["output_hash"] = file_hash(dir(name) / "manifest.json");
    io::write_json(dir(name) / "stage.json", record);
  }

  void write_tables(const fs::path& out, const SplitTables& t) {
    io::write_json(out / "manifest.json", {{"kind", "success-tables"}, {"tables", t.to_json()}});
    std::ofstream(out / "tables.txt") << t.seen.to_text() << "\n" << t.unseen.to_text();
    log(t.seen.to_text());
    log(t.unseen.to_text());
  }

  encoder::EncoderWeights train_without_tf_if(const fs::path& out, const encoder::EncoderConfig& ecfg) {
    const auto set = bagsim::load_sequences(dir("datagen"));
    std::vector<bagsim::Family> keep;
    for (auto f : cfg_.encoder_families)
      if (f != bagsim::Family::TF && f != bagsim::Family::IF) keep.push_back(f);
    const auto kept = filter_families(set.sequences, keep);
    const double p = matched_pair_rate(cfg_.p_m, frame_count(set.sequences), frame_count(kept));
    const auto seed = pairs_seed(cfg_);
    const auto ds_dir = out / "pairs-no-tf-if";
    corrdata::save_dataset(corrdata::make_dataset(kept, corrdata::build_pairs(kept, p, seed, cfg_.cross_template), p, seed),
                           ds_dir);
    check_split_hygiene();
    const auto w = encoder::train_encoder(corrdata::load_dataset(ds_dir), ecfg, {epoch_logger(log_, "encoder-no-TF-IF")});
    encoder::save_encoder(out / "encoder-no-tf-if", w);
    return w;
  }

  void log(const std::string& msg) const {
    if (log_) log_(msg);
  }

  ExperimentConfig cfg_;
  fs::path root_;
  Logger log_;
  io::json pending_ = io::json::object();
};

inline SplitTables run_experiment(const ExperimentConfig& cfg, const fs::path& root, const Logger& log = {}) {
  return Experiment(cfg, root, log).run();
}

inline SuccessTable run_ablations(const ExperimentConfig& cfg, const fs::path& root, const Logger& log = {}) {
  return Experiment(cfg, root, log).ablate();
}

struct Report {
  std::string text;
  io::json json;
};

/// Collects whatever tables exist under `root`.
inline Report report(const fs::path& root) {
  Report r{"", io::json::object()};
  if (const auto eval = root / "eval" / "manifest.json"; fs::exists(eval)) {
    const auto t = SplitTables::from_json(io::read_json(eval).at("tables"));
    r.text += t.seen.to_text() + "\n" + t.unseen.to_text();
    r.json["eval"] = t.to_json();
  }
  if (const auto abl = root / "ablate" / "manifest.json"; fs::exists(abl)) {
    const auto t = SuccessTable::from_json(io::read_json(abl).at("table"));
    r.text += (r.text.empty() ? "" : "\n") + t.to_text();
    r.json["ablate"] = t.to_json();
  }
  if (r.json.empty()) throw NotFoundError("report: no evaluation tables under " + root.string());
  return r;
}

}  // namespace bagknot::harness
