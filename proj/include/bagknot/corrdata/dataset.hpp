#pragma once

// Correspondence pairs: two frames of the same bag template whose keypoints
// share identities. Each unordered frame pair is included independently with
// probability p_m, decided by a keyed hash of the two frame identifiers.

#include "bagknot/bagsim/io.hpp"
#include "bagknot/core/array_io.hpp"
#include "bagknot/core/error.hpp"
#include "bagknot/core/random.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <vector>

namespace bagknot::corrdata {

using io::json;

/// (sequence id, frame index) identifies a frame across the corpus.
struct FrameKey {
  int sequence = 0;
  int frame = 0;
  auto operator<=>(const FrameKey&) const = default;
};

struct CorrespondencePair {
  FrameKey a;
  FrameKey b;
  std::vector<int> matched_ids;
};

/// Whether the unordered pair {a, b} is drawn, independent of enumeration order.
inline bool pair_selected(FrameKey a, FrameKey b, double p_m, std::uint64_t seed) {
  if (b < a) std::swap(a, b);
  const auto h = derive_seed(seed, {0xC022, static_cast<std::uint64_t>(a.sequence),
                                    static_cast<std::uint64_t>(a.frame),
                                    static_cast<std::uint64_t>(b.sequence),
                                    static_cast<std::uint64_t>(b.frame)});
  return unit_interval(h) < p_m;
}

/// Pairs over every frame of `sequences`. By default only same-template
/// frames are paired; `cross_template` admits every frame pair, since the
/// keypoint ids are shared by all templates. Output is sorted by (a, b)
/// with a < b.
inline std::vector<CorrespondencePair> build_pairs(const std::vector<bagsim::Sequence>& sequences,
                                                   double p_m, std::uint64_t seed,
                                                   bool cross_template = false) {
  if (!(p_m > 0.0 && p_m <= 1.0)) throw ConfigError("build_pairs: p_m must lie in (0, 1]");
  struct Entry {
    FrameKey key;
    int template_id;
  };
  std::vector<Entry> frames;
  std::set<int> ids;
  for (const auto& s : sequences) {
    if (!ids.insert(s.id).second) throw InputError("build_pairs: duplicate sequence id " + std::to_string(s.id));
    for (std::size_t k = 0; k < s.frames.size(); ++k)
      frames.push_back({{s.id, static_cast<int>(k)}, s.template_id});
  }
  if (frames.size() < 2) throw InputError("build_pairs: need at least two frames");
  std::sort(frames.begin(), frames.end(), [](const Entry& x, const Entry& y) { return x.key < y.key; });

  std::vector<int> all_ids(kNumKeypoints);
  for (int k = 0; k < kNumKeypoints; ++k) all_ids[static_cast<std::size_t>(k)] = k;
  std::vector<CorrespondencePair> pairs;
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (std::size_t j = i + 1; j < frames.size(); ++j) {
      if (!cross_template && frames[i].template_id != frames[j].template_id) continue;
      if (pair_selected(frames[i].key, frames[j].key, p_m, seed))
        pairs.push_back({frames[i].key, frames[j].key, all_ids});
    }
  return pairs;
}

/// One frame stored inside a correspondence dataset.
struct DatasetFrame {
  FrameKey key;
  int template_id = 0;
  bagsim::Family family = bagsim::Family::VC;
  PointCloud cloud;
  PointCloud keypoints;
};

/// Self-contained training set: the frames referenced by the pairs plus the
/// pairs as indices into `frames`.
struct CorrespondenceDataset {
  std::vector<DatasetFrame> frames;
  struct Pair {
    int a = 0;
    int b = 0;
    std::vector<int> matched_ids;
  };
  std::vector<Pair> pairs;
  double p_m = 0.0;
  std::uint64_t seed = 0;
  json manifest = json::object();
};

inline CorrespondenceDataset make_dataset(const std::vector<bagsim::Sequence>& sequences,
                                          const std::vector<CorrespondencePair>& pairs, double p_m,
                                          std::uint64_t seed) {
  std::map<int, const bagsim::Sequence*> by_id;
  for (const auto& s : sequences) by_id[s.id] = &s;
  std::set<FrameKey> used;
  for (const auto& p : pairs) {
    used.insert(p.a);
    used.insert(p.b);
  }
  CorrespondenceDataset ds;
  ds.p_m = p_m;
  ds.seed = seed;
  std::map<FrameKey, int> slot;
  for (const auto& key : used) {
    auto it = by_id.find(key.sequence);
    if (it == by_id.end() || key.frame < 0 || key.frame >= static_cast<int>(it->second->frames.size())) {
      throw InputError("make_dataset: pair references an unknown frame");
    }
    const auto& s = *it->second;
    const auto& f = s.frames[static_cast<std::size_t>(key.frame)];
    slot[key] = static_cast<int>(ds.frames.size());
    ds.frames.push_back({key, s.template_id, s.family, f.cloud, f.keypoints});
  }
  for (const auto& p : pairs) {
    const auto& fa = ds.frames[static_cast<std::size_t>(slot.at(p.a))];
    const auto& fb = ds.frames[static_cast<std::size_t>(slot.at(p.b))];
    if (p.a == p.b) throw InputError("make_dataset: self-pair");
    if (p.matched_ids.empty()) throw InputError("make_dataset: pair without matched keypoints");
    ds.pairs.push_back({slot.at(p.a), slot.at(p.b), p.matched_ids});
  }
  return ds;
}

/// Writes manifest.json plus frame clouds and keypoints as float32 arrays.
inline json save_dataset(const CorrespondenceDataset& ds, const std::filesystem::path& dir,
                         const json& extra = json::object()) {
  std::filesystem::create_directories(dir);
  json manifest{{"kind", "correspondence-dataset"}, {"format_version", 1}, {"p_m", ds.p_m}, {"seed", ds.seed}};
  const std::size_t n_pc = ds.frames.empty() ? 0 : static_cast<std::size_t>(ds.frames.front().cloud.rows());
  std::vector<float> clouds, kps;
  json frames = json::array();
  std::set<int> seqs;
  for (const auto& f : ds.frames) {
    if (static_cast<std::size_t>(f.cloud.rows()) != n_pc) throw InputError("save_dataset: frames must share n_pc");
    const auto c = io::to_f32(f.cloud);
    clouds.insert(clouds.end(), c.begin(), c.end());
    const auto k = io::to_f32(f.keypoints);
    kps.insert(kps.end(), k.begin(), k.end());
    frames.push_back({{"sequence", f.key.sequence},
                      {"frame", f.key.frame},
                      {"template_id", f.template_id},
                      {"family", bagsim::to_string(f.family)}});
    seqs.insert(f.key.sequence);
  }
  json pairs = json::array();
  for (const auto& p : ds.pairs) pairs.push_back({{"a", p.a}, {"b", p.b}, {"matched_ids", p.matched_ids}});
  manifest["frames"] = frames;
  manifest["pairs"] = pairs;
  manifest["n_pc"] = n_pc;
  manifest["clouds"] = io::save_array(dir, "frame_clouds.f32", {ds.frames.size(), n_pc, 3}, clouds);
  manifest["keypoints"] =
      io::save_array(dir, "frame_keypoints.f32", {ds.frames.size(), std::size_t{kNumKeypoints}, 3}, kps);
  manifest["counts"] = {{"sequences", seqs.size()}, {"frames", ds.frames.size()}, {"pairs", ds.pairs.size()}};
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  io::write_json(dir / "manifest.json", manifest);
  return manifest;
}

inline CorrespondenceDataset load_dataset(const std::filesystem::path& dir) {
  CorrespondenceDataset ds;
  ds.manifest = io::read_json(dir / "manifest.json");
  const auto& m = ds.manifest;
  if (m.value("kind", "") != "correspondence-dataset") {
    throw IntegrityError("not a correspondence dataset: " + dir.string());
  }
  ds.p_m = m.at("p_m").get<double>();
  ds.seed = m.at("seed").get<std::uint64_t>();
  const auto n_frames = m.at("frames").size();
  const auto n_pc = m.at("n_pc").get<std::size_t>();
  if (m.at("clouds").at("shape") != json::array({n_frames, n_pc, 3}) ||
      m.at("keypoints").at("shape") != json::array({n_frames, kNumKeypoints, 3})) {
    throw IntegrityError("correspondence dataset: declared shapes disagree with frame list");
  }
  const auto clouds = io::load_array(dir, m.at("clouds"));
  const auto kps = io::load_array(dir, m.at("keypoints"));
  for (std::size_t i = 0; i < n_frames; ++i) {
    const auto& e = m.at("frames")[i];
    DatasetFrame f;
    f.key = {e.at("sequence").get<int>(), e.at("frame").get<int>()};
    f.template_id = e.at("template_id").get<int>();
    f.family = bagsim::parse_family(e.at("family").get<std::string>());
    f.cloud = bagsim::cloud_from_f32(clouds.data() + i * n_pc * 3, static_cast<Eigen::Index>(n_pc));
    f.keypoints = bagsim::cloud_from_f32(kps.data() + i * kNumKeypoints * 3, kNumKeypoints);
    ds.frames.push_back(std::move(f));
  }
  for (const auto& p : m.at("pairs")) {
    CorrespondenceDataset::Pair pair{p.at("a").get<int>(), p.at("b").get<int>(),
                                     p.at("matched_ids").get<std::vector<int>>()};
    if (pair.a < 0 || pair.b < 0 || pair.a >= static_cast<int>(n_frames) || pair.b >= static_cast<int>(n_frames)) {
      throw IntegrityError("correspondence dataset: pair references a missing frame");
    }
    ds.pairs.push_back(std::move(pair));
  }
  return ds;
}

}  // namespace bagknot::corrdata
