#pragma once

#include "bagknot/bagsim/bag_template.hpp"
#include "bagknot/bagsim/deformation.hpp"
#include "bagknot/bagsim/sequence.hpp"
#include "bagknot/core/array_io.hpp"

#include <filesystem>
#include <vector>

namespace bagknot::bagsim {

using io::json;

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
inline Vec3 vec3_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline json to_json(const BagTemplate& t) {
  return json{{"template_id", t.template_id},
              {"body_dims", to_json(t.body_dims)},
              {"body_exponent", t.body_exponent},
              {"handle_arc_radius", t.handle_arc_radius},
              {"handle_tube_radius", t.handle_tube_radius},
              {"attach_offsets", t.attach_offsets}};
}

inline BagTemplate template_from_json(const json& j) {
  BagTemplate t;
  t.template_id = j.at("template_id").get<int>();
  t.body_dims = vec3_from_json(j.at("body_dims"));
  t.body_exponent = j.at("body_exponent").get<double>();
  t.handle_arc_radius = j.at("handle_arc_radius").get<double>();
  t.handle_tube_radius = j.at("handle_tube_radius").get<double>();
  t.attach_offsets = j.at("attach_offsets").get<std::array<double, kNumHandles>>();
  t.validate();
  return t;
}

inline json to_json(const DeformationParams& p) {
  json warp = json::array();
  for (const auto& w : p.warp)
    warp.push_back({{"center", to_json(w.center)}, {"amplitude", to_json(w.amplitude)}});
  return json{{"family", to_string(p.family)},
              {"orientation_angle", p.orientation_angle},
              {"compression", p.compression},
              {"twist_angle", p.twist_angle},
              {"incline_shear", p.incline_shear},
              {"flatten", p.flatten},
              {"warp", warp}};
}

inline DeformationParams params_from_json(const json& j) {
  DeformationParams p;
  p.family = parse_family(j.at("family").get<std::string>());
  p.orientation_angle = j.at("orientation_angle").get<double>();
  p.compression = j.at("compression").get<double>();
  p.twist_angle = j.at("twist_angle").get<double>();
  p.incline_shear = j.at("incline_shear").get<double>();
  p.flatten = j.at("flatten").get<double>();
  for (const auto& w : j.at("warp"))
    p.warp.push_back({vec3_from_json(w.at("center")), vec3_from_json(w.at("amplitude"))});
  return p;
}

/// One simulated deformation video.
struct Sequence {
  int id = 0;
  int template_id = 0;
  Family family = Family::VC;
  std::uint64_t seed = 0;
  DeformationParams start;
  DeformationParams end;
  std::vector<Frame> frames;
};

inline PointCloud cloud_from_f32(const float* data, Eigen::Index rows) {
  PointCloud c(rows, 3);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (int k = 0; k < 3; ++k) c(i, k) = static_cast<double>(data[3 * i + k]);
  return c;
}

/// Writes `manifest.json` plus two arrays (clouds, keypoints) per sequence.
inline json save_sequences(const std::filesystem::path& dir, const std::vector<BagTemplate>& templates,
                           const std::vector<Sequence>& sequences, const json& extra = json::object()) {
  std::filesystem::create_directories(dir);
  json manifest{{"kind", "bagsim-sequences"}, {"format_version", 1}};
  manifest["templates"] = json::array();
  for (const auto& t : templates) manifest["templates"].push_back(to_json(t));
  manifest["sequences"] = json::array();
  std::size_t total_frames = 0;
  for (const auto& s : sequences) {
    if (s.frames.empty()) throw InputError("save_sequences: empty sequence");
    const auto length = s.frames.size();
    const auto n_pc = static_cast<std::size_t>(s.frames.front().cloud.rows());
    std::vector<float> clouds, kps;
    clouds.reserve(length * n_pc * 3);
    for (const auto& f : s.frames) {
      if (static_cast<std::size_t>(f.cloud.rows()) != n_pc) {
        throw InputError("save_sequences: frames of one sequence must share n_pc");
      }
      auto c = io::to_f32(f.cloud);
      clouds.insert(clouds.end(), c.begin(), c.end());
      auto k = io::to_f32(f.keypoints);
      kps.insert(kps.end(), k.begin(), k.end());
    }
    const std::string stem = "seq_" + std::to_string(s.id);
    json entry{{"id", s.id},
               {"template_id", s.template_id},
               {"family", to_string(s.family)},
               {"seed", s.seed},
               {"length", length},
               {"n_pc", n_pc},
               {"start", to_json(s.start)},
               {"end", to_json(s.end)}};
    entry["clouds"] = io::save_array(dir, stem + "_clouds.f32", {length, n_pc, 3}, clouds);
    entry["keypoints"] =
        io::save_array(dir, stem + "_keypoints.f32", {length, std::size_t{kNumKeypoints}, 3}, kps);
    manifest["sequences"].push_back(entry);
    total_frames += length;
  }
  manifest["counts"] = {{"sequences", sequences.size()}, {"frames", total_frames}};
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  io::write_json(dir / "manifest.json", manifest);
  return manifest;
}

struct SequenceSet {
  std::vector<BagTemplate> templates;
  std::vector<Sequence> sequences;
  json manifest;
};

inline SequenceSet load_sequences(const std::filesystem::path& dir) {
  SequenceSet set;
  set.manifest = io::read_json(dir / "manifest.json");
  if (set.manifest.value("kind", "") != "bagsim-sequences") {
    throw IntegrityError("not a sequence dataset: " + dir.string());
  }
  for (const auto& t : set.manifest.at("templates")) set.templates.push_back(template_from_json(t));
  for (const auto& e : set.manifest.at("sequences")) {
    Sequence s;
    s.id = e.at("id").get<int>();
    s.template_id = e.at("template_id").get<int>();
    s.family = parse_family(e.at("family").get<std::string>());
    s.seed = e.at("seed").get<std::uint64_t>();
    s.start = params_from_json(e.at("start"));
    s.end = params_from_json(e.at("end"));
    const auto length = e.at("length").get<std::size_t>();
    const auto n_pc = e.at("n_pc").get<std::size_t>();
    if (e.at("clouds").at("shape") != json::array({length, n_pc, 3}) ||
        e.at("keypoints").at("shape") != json::array({length, kNumKeypoints, 3})) {
      throw IntegrityError("sequence " + std::to_string(s.id) + ": declared shapes disagree");
    }
    const auto clouds = io::load_array(dir, e.at("clouds"));
    const auto kps = io::load_array(dir, e.at("keypoints"));
    for (std::size_t k = 0; k < length; ++k) {
      Frame f;
      f.cloud = cloud_from_f32(clouds.data() + k * n_pc * 3, static_cast<Eigen::Index>(n_pc));
      f.keypoints = cloud_from_f32(kps.data() + k * kNumKeypoints * 3, kNumKeypoints);
      f.deformation =
          interpolate(s.start, s.end, smooth_step(static_cast<double>(k) / std::max<std::size_t>(1, length - 1)));
      f.deformation.family = s.family;
      f.seed = s.seed;
      f.template_id = s.template_id;
      s.frames.push_back(std::move(f));
    }
    set.sequences.push_back(std::move(s));
  }
  return set;
}

/// Recording plan for a deformation corpus: `per_cell` sequences for every
/// (template, family) cell, each moving between two independent samples of
/// its family.
struct CorpusSpec {
  std::vector<Family> families{kAllFamilies.begin(), kAllFamilies.end()};
  int per_cell = 10;
  int length = 5;
  int n_pc = 1024;
  std::uint64_t seed = 0;
};

inline std::vector<Sequence> generate_corpus(const std::vector<BagTemplate>& templates, const CorpusSpec& spec) {
  if (spec.per_cell < 1) throw ConfigError("generate_corpus: per_cell must be at least 1");
  std::vector<Sequence> out;
  for (const auto& t : templates)
    for (Family f : spec.families)
      for (int r = 0; r < spec.per_cell; ++r) {
        Sequence s;
        s.id = static_cast<int>(out.size());
        s.template_id = t.template_id;
        s.family = f;
        s.seed = derive_seed(spec.seed, {0xC0B5, static_cast<std::uint64_t>(t.template_id),
                                         static_cast<std::uint64_t>(f), static_cast<std::uint64_t>(r)});
        s.start = sample_family(f, derive_seed(s.seed, {1}));
        s.end = sample_family(f, derive_seed(s.seed, {2}));
        s.frames = generate_sequence(t, s.start, s.end, spec.length, derive_seed(s.seed, {3}), spec.n_pc);
        for (auto& fr : s.frames) fr.template_id = t.template_id;
        out.push_back(std::move(s));
      }
  return out;
}

}  // namespace bagknot::bagsim
