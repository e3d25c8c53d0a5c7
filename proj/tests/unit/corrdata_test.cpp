#include "bagknot/corrdata/dataset.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace bagknot::corrdata {
namespace {

namespace fs = std::filesystem;

// Frames are only counted and keyed here, so clouds stay small.
bagsim::Sequence stub_sequence(int id, int template_id, int frames) {
  bagsim::Sequence s;
  s.id = id;
  s.template_id = template_id;
  for (int k = 0; k < frames; ++k) {
    bagsim::Frame f;
    f.cloud = PointCloud::Constant(4, 3, id + 0.01 * k);
    f.keypoints = PointCloud::Constant(kNumKeypoints, 3, -id - 0.01 * k);
    f.template_id = template_id;
    s.frames.push_back(f);
  }
  return s;
}

std::vector<bagsim::Sequence> rendered_corpus(std::uint64_t seed) {
  bagsim::CorpusSpec spec;
  spec.families = {bagsim::Family::VC, bagsim::Family::TF};
  spec.per_cell = 1;
  spec.length = 3;
  spec.n_pc = 128;
  spec.seed = seed;
  return bagsim::generate_corpus({bagsim::synthesize_template(0), bagsim::synthesize_template(1)}, spec);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(BuildPairs, TwoFramesWithCertainInclusion) {
  const auto pairs = build_pairs({stub_sequence(0, 0, 2)}, 1.0, 5);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].a, (FrameKey{0, 0}));
  EXPECT_EQ(pairs[0].b, (FrameKey{0, 1}));
}

TEST(BuildPairs, CertainInclusionMatchesAllKeypoints) {
  const auto pairs = build_pairs({stub_sequence(0, 0, 4), stub_sequence(1, 0, 3)}, 1.0, 5);
  EXPECT_EQ(pairs.size(), 21u);  // C(7, 2)
  for (const auto& p : pairs) EXPECT_EQ(p.matched_ids, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST(BuildPairs, BinomialCountWithinFourSigma) {
  const double mean = 0.001 * 100 * 99 / 2, sigma = std::sqrt(mean * 0.999);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto n = static_cast<double>(build_pairs({stub_sequence(0, 0, 100)}, 0.001, seed).size());
    EXPECT_LE(std::abs(n - mean), 4 * sigma) << "seed " << seed;
  }
  // pooled over many seeds the empirical rate approaches p_m
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed)
    total += static_cast<double>(build_pairs({stub_sequence(0, 0, 100)}, 0.05, seed).size());
  const double rate = total / (200 * 4950.0);
  EXPECT_NEAR(rate, 0.05, 4 * std::sqrt(0.05 * 0.95 / (200 * 4950.0)));
}

TEST(BuildPairs, IndependentOfSequenceOrderAndDeterministic) {
  std::vector<bagsim::Sequence> seqs{stub_sequence(0, 0, 20), stub_sequence(1, 0, 15), stub_sequence(2, 0, 10)};
  const auto a = build_pairs(seqs, 0.1, 9);
  std::reverse(seqs.begin(), seqs.end());
  const auto b = build_pairs(seqs, 0.1, 9);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].a, b[i].a);
    EXPECT_EQ(a[i].b, b[i].b);
  }
  EXPECT_TRUE(pair_selected({1, 3}, {0, 4}, 0.5, 9) == pair_selected({0, 4}, {1, 3}, 0.5, 9));
  const auto c = build_pairs(seqs, 0.1, 10);
  bool differs = c.size() != a.size();
  for (std::size_t i = 0; !differs && i < a.size(); ++i) differs = !(a[i].a == c[i].a && a[i].b == c[i].b);
  EXPECT_TRUE(differs);
}

TEST(BuildPairs, CrossTemplatePolicy) {
  const std::vector<bagsim::Sequence> seqs{stub_sequence(0, 0, 3), stub_sequence(1, 1, 3)};
  for (const auto& p : build_pairs(seqs, 1.0, 1)) EXPECT_EQ(p.a.sequence, p.b.sequence);
  EXPECT_EQ(build_pairs(seqs, 1.0, 1).size(), 6u);
  EXPECT_EQ(build_pairs(seqs, 1.0, 1, true).size(), 15u);
}

TEST(BuildPairs, Errors) {
  const std::vector<bagsim::Sequence> seqs{stub_sequence(0, 0, 3)};
  EXPECT_THROW(build_pairs(seqs, 0.0, 1), ConfigError);
  EXPECT_THROW(build_pairs(seqs, 1.5, 1), ConfigError);
  EXPECT_THROW(build_pairs(seqs, std::nan(""), 1), ConfigError);
  EXPECT_THROW(build_pairs({stub_sequence(0, 0, 1)}, 0.5, 1), InputError);
  EXPECT_THROW(build_pairs({stub_sequence(0, 0, 2), stub_sequence(0, 0, 2)}, 0.5, 1), InputError);
  EXPECT_TRUE(build_pairs({stub_sequence(0, 0, 2)}, 1e-9, 1).empty());
}

TEST(Dataset, HoldsOnlyReferencedFrames) {
  const auto seqs = rendered_corpus(3);
  auto pairs = build_pairs(seqs, 1.0, 2);
  pairs.resize(2);
  const auto ds = make_dataset(seqs, pairs, 1.0, 2);
  EXPECT_LE(ds.frames.size(), 4u);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(ds.frames[static_cast<std::size_t>(ds.pairs[i].a)].key, pairs[i].a);
    EXPECT_EQ(ds.frames[static_cast<std::size_t>(ds.pairs[i].b)].key, pairs[i].b);
  }
  const auto& f = ds.frames[static_cast<std::size_t>(ds.pairs[0].a)];
  EXPECT_EQ(f.cloud, seqs[static_cast<std::size_t>(f.key.sequence)].frames[static_cast<std::size_t>(f.key.frame)].cloud);
}

TEST(Dataset, RoundTripIsByteStable) {
  const auto seqs = rendered_corpus(4);
  const auto pairs = build_pairs(seqs, 0.5, 7, true);
  const auto ds = make_dataset(seqs, pairs, 0.5, 7);
  const fs::path dir = fs::temp_directory_path() / "bagknot_corr_a", dir2 = fs::temp_directory_path() / "bagknot_corr_b";
  fs::remove_all(dir);
  fs::remove_all(dir2);
  save_dataset(ds, dir);
  const auto back = load_dataset(dir);
  ASSERT_EQ(back.frames.size(), ds.frames.size());
  ASSERT_EQ(back.pairs.size(), ds.pairs.size());
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    EXPECT_EQ(back.frames[i].key, ds.frames[i].key);
    EXPECT_EQ(back.frames[i].family, ds.frames[i].family);
    EXPECT_LT((back.frames[i].cloud - ds.frames[i].cloud).cwiseAbs().maxCoeff(), 1e-6);
  }
  save_dataset(back, dir2);
  for (const char* name : {"manifest.json", "frame_clouds.f32", "frame_keypoints.f32"})
    EXPECT_EQ(read_bytes(dir / name), read_bytes(dir2 / name)) << name;
  EXPECT_EQ(back.manifest.at("counts").at("pairs").get<std::size_t>(), ds.pairs.size());
  fs::remove_all(dir2);

  fs::resize_file(dir / "frame_clouds.f32", fs::file_size(dir / "frame_clouds.f32") - 1);
  EXPECT_THROW(load_dataset(dir), IntegrityError);
  fs::remove_all(dir);
}

TEST(Dataset, EmptyPairListRoundTrips) {
  const fs::path dir = fs::temp_directory_path() / "bagknot_corr_empty";
  fs::remove_all(dir);
  const auto ds = make_dataset(rendered_corpus(5), {}, 0.001, 1);
  save_dataset(ds, dir);
  const auto back = load_dataset(dir);
  EXPECT_TRUE(back.pairs.empty());
  EXPECT_TRUE(back.frames.empty());
  fs::remove_all(dir);
}

TEST(Dataset, RejectsBadPairs) {
  const auto seqs = rendered_corpus(6);
  EXPECT_THROW(make_dataset(seqs, {{{0, 0}, {0, 0}, {0}}}, 1.0, 1), InputError);
  EXPECT_THROW(make_dataset(seqs, {{{0, 0}, {99, 0}, {0}}}, 1.0, 1), InputError);
  EXPECT_THROW(make_dataset(seqs, {{{0, 0}, {0, 1}, {}}}, 1.0, 1), InputError);
}

}  // namespace
}  // namespace bagknot::corrdata
