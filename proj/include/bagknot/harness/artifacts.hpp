#pragma once

// On-disk forms of demonstration sets and reference specifications.

#include "bagknot/bagsim/expert.hpp"
#include "bagknot/bagsim/io.hpp"
#include "bagknot/matcher/matcher.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace bagknot::harness {

namespace fs = std::filesystem;
using io::json;

struct DemoRecord {
  bagsim::Demonstration demo;
  int template_id = 0;
  bagsim::Family family = bagsim::Family::VC;
  std::uint64_t episode_seed = 0;
};

inline RowMatrix matrix_from_f32(const std::vector<float>& data, Eigen::Index rows, Eigen::Index cols) {
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(data[static_cast<std::size_t>(i)]);
  return m;
}

/// Rounds through float32 so in-memory data equals what a reload yields.
inline RowMatrix round_f32(const RowMatrix& m) { return m.cast<float>().cast<double>(); }

inline json save_demonstrations(const fs::path& dir, const std::vector<DemoRecord>& demos, std::uint64_t task_seed,
                                const json& extra = json::object()) {
  fs::create_directories(dir);
  json manifest{{"kind", "demonstrations"}, {"format_version", 1}, {"task_seed", task_seed}};
  json entries = json::array();
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const auto& r = demos[i];
    const auto& d = r.demo;
    const auto T = static_cast<std::size_t>(d.actions.rows());
    const std::string stem = "demo_" + std::to_string(i);
    json e{{"index", i},
           {"template_id", r.template_id},
           {"family", bagsim::to_string(r.family)},
           {"episode_seed", r.episode_seed},
           {"seed", d.seed},
           {"length", T},
           {"stage_boundaries", d.stage_boundaries}};
    e["keypoints"] = io::save_array(dir, stem + "_keypoints.f32", {T, std::size_t{kKeypointDim}}, io::to_f32(d.keypoints));
    e["observed_keypoints"] = io::save_array(dir, stem + "_observed.f32", {T, std::size_t{kKeypointDim}},
                                             io::to_f32(d.observed_keypoints));
    e["states"] = io::save_array(dir, stem + "_states.f32", {T, std::size_t{kJointDim}}, io::to_f32(d.states));
    e["actions"] = io::save_array(dir, stem + "_actions.f32", {T, std::size_t{kJointDim}}, io::to_f32(d.actions));
    entries.push_back(e);
  }
  manifest["demos"] = entries;
  manifest["counts"] = {{"demos", demos.size()}};
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  io::write_json(dir / "manifest.json", manifest);
  return manifest;
}

struct DemoSet {
  std::vector<DemoRecord> records;
  std::uint64_t task_seed = 0;
  json manifest;

  std::vector<bagsim::Demonstration> demonstrations() const {
    std::vector<bagsim::Demonstration> out;
    for (const auto& r : records) out.push_back(r.demo);
    return out;
  }
};

inline DemoSet load_demonstrations(const fs::path& dir) {
  DemoSet set;
  set.manifest = io::read_json(dir / "manifest.json");
  if (set.manifest.value("kind", "") != "demonstrations") throw IntegrityError("not a demonstration set: " + dir.string());
  set.task_seed = set.manifest.at("task_seed").get<std::uint64_t>();
  for (const auto& e : set.manifest.at("demos")) {
    const auto T = e.at("length").get<Eigen::Index>();
    auto load = [&](const char* key, Eigen::Index cols) {
      const auto& entry = e.at(key);
      if (entry.at("shape") != json::array({T, cols})) throw IntegrityError(std::string("demonstration ") + key + ": shape mismatch");
      return matrix_from_f32(io::load_array(dir, entry), T, cols);
    };
    DemoRecord r;
    r.template_id = e.at("template_id").get<int>();
    r.family = bagsim::parse_family(e.at("family").get<std::string>());
    r.episode_seed = e.at("episode_seed").get<std::uint64_t>();
    r.demo.seed = e.at("seed").get<std::uint64_t>();
    r.demo.task_seed = set.task_seed;
    r.demo.stage_boundaries = e.at("stage_boundaries").get<std::array<int, bagsim::kNumStages>>();
    r.demo.keypoints = load("keypoints", kKeypointDim);
    r.demo.observed_keypoints = load("observed_keypoints", kKeypointDim);
    r.demo.states = load("states", kJointDim);
    r.demo.actions = load("actions", kJointDim);
    set.records.push_back(std::move(r));
  }
  return set;
}

/// Recipe for the frozen reference observation: a template at rest.
struct ReferenceSpec {
  int template_id = 0;
  int n_pc = 1024;
  std::uint64_t seed = 0;

  bagsim::Frame frame() const {
    auto f = bagsim::render_frame(bagsim::synthesize_template(template_id), bagsim::identity_deformation(), n_pc, seed);
    f.template_id = template_id;
    return f;
  }

  json to_json() const { return {{"template_id", template_id}, {"n_pc", n_pc}, {"seed", seed}}; }
  static ReferenceSpec from_json(const json& j) {
    return {j.at("template_id").get<int>(), j.at("n_pc").get<int>(), j.at("seed").get<std::uint64_t>()};
  }
};

inline void save_reference(const fs::path& path, const ReferenceSpec& spec, const encoder::EncoderWeights& w) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_json(path, {{"kind", "reference"}, {"spec", spec.to_json()}, {"encoder_hash", w.hash()}});
}

/// Rebuilds the reference set with `w`; the encoder must be the one it was saved for.
inline matcher::ReferenceSet load_reference(const fs::path& path, const encoder::EncoderWeights& w) {
  const auto j = io::read_json(path);
  if (j.value("kind", "") != "reference") throw IntegrityError("not a reference file: " + path.string());
  if (j.at("encoder_hash").get<std::string>() != w.hash()) {
    throw ConfigError("reference " + path.string() + " was built for a different encoder");
  }
  return matcher::make_reference(ReferenceSpec::from_json(j.at("spec")).frame(), w);
}

}  // namespace bagknot::harness
