// bagknot command-line interface.

#include "bagknot/harness/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace bagknot;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string root;
  bool quiet = false;
};

harness::ExperimentConfig load_config(const Common& c) {
  auto cfg = c.config.empty() ? harness::ExperimentConfig{} : harness::ExperimentConfig::from_file(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

harness::Logger logger(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& s) { std::cerr << s << "\n"; };
}

fs::path root_of(const Common& c) {
  return harness::output_root(c.root.empty() ? std::nullopt : std::optional<fs::path>(c.root));
}

void add_common(CLI::App* app, Common& c, bool with_root, bool with_seed = true) {
  app->add_option("--config", c.config, "key = value configuration file");
  if (with_seed) app->add_option("--seed", c.seed, "global seed");
  app->add_flag("--quiet", c.quiet, "suppress progress output");
  if (with_root) app->add_option("--root", c.root, "output root (default $BAGKNOT_OUT or ./bagknot_out)");
}

PointCloud read_cloud(const fs::path& path) {
  const auto j = io::read_json(path);
  const auto& pts = j.at("cloud");
  PointCloud c(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int k = 0; k < 3; ++k) c(static_cast<Eigen::Index>(i), k) = pts[i].at(static_cast<std::size_t>(k)).get<double>();
  return c;
}

io::json cloud_json(const PointCloud& c) {
  io::json out = io::json::array();
  for (Eigen::Index i = 0; i < c.rows(); ++i) out.push_back({c(i, 0), c(i, 1), c(i, 2)});
  return out;
}

io::json identification_json(const matcher::Identification& id) {
  io::json kps = io::json::array();
  for (int k = 0; k < kNumKeypoints; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    kps.push_back({{"id", k},
                   {"position", {id.keypoints(k, 0), id.keypoints(k, 1), id.keypoints(k, 2)}},
                   {"index", id.index[ku]},
                   {"similarity", id.similarity[ku]}});
  }
  return kps;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keypoint-conditioned bag manipulation: data, encoder, policy and evaluation"};
  app.require_subcommand(1);
  Common c;

  std::string out, data, pairs_dir, ckpt, demos_dir, enc_dir, pol_dir, ref_path, frame_path, prev_path;
  std::string family = "VC", mode = "track", controller = "policy";
  std::optional<double> p_m;
  int template_id = 0, n_pc = 1024;
  std::uint64_t episode_seed = 0;
  bool json_only = false;

  auto* datagen = app.add_subcommand("datagen", "render the deformation corpus for the seen templates");
  add_common(datagen, c, false);
  datagen->add_option("--out", out, "output directory")->required();
  datagen->callback([&] { harness::make_corpus(load_config(c), out); });

  auto* pairs = app.add_subcommand("pairs", "sample correspondence pairs from a corpus");
  add_common(pairs, c, false);
  pairs->add_option("--data", data, "corpus directory")->required();
  pairs->add_option("--pm", p_m, "pair probability");
  pairs->add_option("--out", out, "output directory")->required();
  pairs->callback([&] {
    auto cfg = load_config(c);
    if (p_m) cfg.p_m = *p_m;
    cfg.validate();
    harness::make_pairs(cfg, data, out);
  });

  auto* train_enc = app.add_subcommand("train-encoder", "train the point encoder on correspondence pairs");
  add_common(train_enc, c, false);
  train_enc->add_option("--pairs", pairs_dir, "correspondence dataset")->required();
  train_enc->add_option("--out", out, "checkpoint directory")->required();
  train_enc->callback([&] { harness::make_encoder(load_config(c), pairs_dir, out, logger(c)); });

  auto* eval_enc = app.add_subcommand("eval-encoder", "keypoint identification accuracy on a dataset's frames");
  add_common(eval_enc, c, false);
  eval_enc->add_option("--ckpt", ckpt, "encoder checkpoint")->required();
  eval_enc->add_option("--pairs", pairs_dir, "correspondence dataset")->required();
  eval_enc->callback([&] {
    const auto w = encoder::load_encoder(ckpt);
    const auto ref = harness::load_reference(fs::path(ckpt) / "reference.json", w);
    const auto ds = corrdata::load_dataset(pairs_dir);
    std::vector<std::pair<PointCloud, PointCloud>> frames;
    for (const auto& f : ds.frames) frames.push_back({f.cloud, f.keypoints});
    const auto rep = matcher::identification_accuracy(frames, ref, w);
    std::cout << io::json{{"frames", frames.size()},
                          {"hits", rep.hits},
                          {"total", rep.total},
                          {"accuracy", rep.rate()},
                          {"mean_error", rep.mean_error}}
                     .dump(2)
              << "\n";
  });

  auto* demos = app.add_subcommand("demos", "record expert demonstrations with tracked keypoints");
  add_common(demos, c, false);
  demos->add_option("--encoder", enc_dir, "encoder checkpoint")->required();
  demos->add_option("--out", out, "output directory")->required();
  demos->callback([&] { harness::make_demos(load_config(c), enc_dir, out); });

  auto* train_pol = app.add_subcommand("train-policy", "train the diffusion policy on demonstrations");
  add_common(train_pol, c, false);
  train_pol->add_option("--demos", demos_dir, "demonstration directory")->required();
  train_pol->add_option("--encoder", enc_dir, "encoder checkpoint the demos were perceived with");
  train_pol->add_option("--out", out, "checkpoint directory")->required();
  train_pol->callback([&] {
    const auto cfg = load_config(c);
    if (!enc_dir.empty()) {
      const auto set = harness::load_demonstrations(demos_dir);
      const auto want = set.manifest.value("encoder_hash", "");
      if (want != encoder::load_encoder(enc_dir).hash()) throw ConfigError("demonstrations were perceived with another encoder");
    }
    harness::make_policy(cfg, demos_dir, out, logger(c));
  });

  auto* rollout = app.add_subcommand("rollout", "run one closed-loop episode");
  // the experiment seed (and so the task) comes from --config here
  add_common(rollout, c, false, false);
  rollout->add_option("--policy", pol_dir, "policy checkpoint")->required();
  rollout->add_option("--encoder", enc_dir, "encoder checkpoint")->required();
  rollout->add_option("--ref", ref_path, "reference file (default <encoder>/reference.json)");
  rollout->add_option("--family", family, "deformation family: VC, HC, DC, TF or IF");
  rollout->add_option("--template", template_id, "template id");
  rollout->add_option("--seed,--episode-seed", episode_seed, "deformation seed of the episode");
  rollout->add_option("--mode", mode, "track or reidentify");
  rollout->add_option("--controller", controller, "policy or expert");
  rollout->callback([&] {
    const auto cfg = load_config(c);
    const auto enc = encoder::load_encoder(enc_dir);
    const auto ref = harness::load_reference(ref_path.empty() ? fs::path(enc_dir) / "reference.json" : fs::path(ref_path), enc);
    const auto pol = policy::load_policy(pol_dir);
    policy::RolloutOptions opt;
    opt.mode = matcher::parse_mode(mode);
    opt.n_enc = cfg.n_enc;
    if (controller == "expert") {
      opt.controller = policy::Controller::ExpertReplay;
    } else if (controller != "policy") {
      throw InputError("unknown controller '" + controller + "'");
    }
    const bagsim::EpisodeSpec spec{template_id, bagsim::parse_family(family), episode_seed, cfg.episode_length, cfg.n_pc};
    const auto task = bagsim::sample_task(harness::task_seed(cfg));
    const auto rec = policy::rollout(pol, enc, ref, bagsim::synthesize_template(template_id), spec, task, opt,
                                     derive_seed(cfg.seed, {0x201, episode_seed}));
    const auto err = bagsim::waypoint_errors(rec.states, rec.keypoints, task, cfg.episode_length);
    std::cout << io::json{{"template", template_id},
                          {"family", family},
                          {"episode_seed", episode_seed},
                          {"mode", mode},
                          {"success", rec.success},
                          {"waypoint_errors", err}}
                     .dump(2)
              << "\n";
  });

  auto* render = app.add_subcommand("render-frame", "write one simulated observation as JSON");
  add_common(render, c, false);
  render->add_option("--family", family, "deformation family");
  render->add_option("--template", template_id, "template id");
  render->add_option("--episode-seed", episode_seed, "deformation seed");
  render->add_option("--n-pc", n_pc, "points in the cloud");
  render->add_option("--out", out, "output JSON file")->required();
  render->callback([&] {
    const auto f = bagsim::render_frame(bagsim::synthesize_template(template_id),
                                        bagsim::sample_family(bagsim::parse_family(family), episode_seed), n_pc,
                                        derive_seed(episode_seed, {0xF4}));
    io::write_json(out, {{"template", template_id},
                         {"family", family},
                         {"cloud", cloud_json(f.cloud)},
                         {"keypoints", cloud_json(f.keypoints)}});
  });

  auto* match = app.add_subcommand("match", "identify the keypoints in one observation");
  add_common(match, c, false);
  match->add_option("--frame", frame_path, "frame JSON with a 'cloud' array")->required();
  match->add_option("--ref", ref_path, "reference file")->required();
  match->add_option("--encoder", enc_dir, "encoder checkpoint")->required();
  match->add_option("--mode", mode, "reidentify, or track (needs --prev)");
  match->add_option("--prev", prev_path, "previous frame for tracking");
  match->callback([&] {
    const auto enc = encoder::load_encoder(enc_dir);
    const auto ref = harness::load_reference(ref_path, enc);
    const auto cloud = read_cloud(frame_path);
    io::json j{{"mode", mode}};
    if (matcher::parse_mode(mode) == matcher::Mode::Track && !prev_path.empty()) {
      const auto prev = read_cloud(prev_path);
      matcher::TrackState st;
      st.keypoints = matcher::identify_keypoints(prev, ref, enc).keypoints;
      st = matcher::track_step(st, prev, cloud);
      j["keypoints"] = cloud_json(st.keypoints);
      j["ids"] = st.keypoint_ids;
    } else {
      if (matcher::parse_mode(mode) == matcher::Mode::Track) j["mode"] = "reidentify";
      const auto id = matcher::identify_keypoints(cloud, ref, enc);
      j["keypoints"] = identification_json(id);
    }
    std::cout << j.dump(2) << "\n";
  });

  auto* run = app.add_subcommand("run", "run every stage through evaluation, resuming finished ones");
  add_common(run, c, true);
  run->callback([&] {
    const auto t = harness::run_experiment(load_config(c), root_of(c), logger(c));
    std::cout << t.seen.to_text() << "\n" << t.unseen.to_text();
  });

  auto* eval = app.add_subcommand("eval", "success tables on seen and unseen templates");
  add_common(eval, c, true);
  eval->callback([&] {
    const auto t = harness::run_experiment(load_config(c), root_of(c), logger(c));
    std::cout << t.seen.to_text() << "\n" << t.unseen.to_text();
  });

  auto* ablate = app.add_subcommand("ablate", "ablation table on unseen templates");
  add_common(ablate, c, true);
  ablate->callback([&] { std::cout << harness::run_ablations(load_config(c), root_of(c), logger(c)).to_text(); });

  auto* report = app.add_subcommand("report", "print the tables found under the output root");
  add_common(report, c, true);
  report->add_flag("--json", json_only, "print only the JSON form");
  report->callback([&] {
    const auto r = harness::report(root_of(c));
    if (!json_only) std::cout << r.text << "\n";
    std::cout << r.json.dump(2) << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
