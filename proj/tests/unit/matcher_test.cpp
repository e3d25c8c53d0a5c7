#include "bagknot/bagsim/sequence.hpp"
#include "bagknot/matcher/matcher.hpp"

#include <gtest/gtest.h>

#include <numeric>

namespace bagknot::matcher {
namespace {

encoder::EncoderWeights small_encoder(std::uint64_t seed = 0) {
  auto c = encoder::EncoderConfig::desk();
  c.d = 16;
  c.sa_levels = {{64, 0.3, 8, {8, 8}}, {16, 0.6, 8, {16}}};
  c.fp_widths = {{16}, {16}};
  c.head_widths = {16};
  c.seed = seed;
  return encoder::EncoderWeights::initial(c);
}

bagsim::Frame frame(std::uint64_t seed, int n_pc = 256) {
  const auto tmpl = bagsim::synthesize_template(static_cast<std::int64_t>(seed % 3));
  const auto fam = bagsim::kAllFamilies[seed % bagsim::kAllFamilies.size()];
  return bagsim::render_frame(tmpl, bagsim::sample_family(fam, seed), n_pc, seed + 1);
}

// Exhaustive scan written independently of the matcher.
std::array<int, kNumKeypoints> brute_force(const RowMatrix& features, const RowMatrix& ref) {
  std::array<int, kNumKeypoints> out{};
  for (int k = 0; k < kNumKeypoints; ++k) {
    std::vector<double> sims(static_cast<std::size_t>(features.rows()));
    for (Eigen::Index j = 0; j < features.rows(); ++j) {
      const auto f = features.row(j);
      const auto r = ref.row(k);
      sims[static_cast<std::size_t>(j)] = std::inner_product(f.data(), f.data() + f.size(), r.data(), 0.0);
    }
    // max_element returns the first maximum
    out[static_cast<std::size_t>(k)] = static_cast<int>(std::max_element(sims.begin(), sims.end()) - sims.begin());
  }
  return out;
}

TEST(Identify, EqualsBruteForceArgmax) {
  const auto w = small_encoder();
  const auto rf = frame(100);
  const auto ref = make_reference(rf, w);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto f = frame(s, 128 + static_cast<int>(s) * 16);
    const auto id = identify_keypoints(f.cloud, ref, w);
    const auto want = brute_force(encoder::encode(f.cloud, w).features, ref.features);
    EXPECT_EQ(id.index, want) << "frame " << s;
    for (int k = 0; k < kNumKeypoints; ++k) EXPECT_EQ(id.keypoints.row(k), f.cloud.row(want[static_cast<std::size_t>(k)]));
  }
}

TEST(Identify, TiesGoToLowestIndex) {
  const auto w = small_encoder();
  const auto ref = make_reference(frame(101), w);
  auto f = frame(7, 128);
  const auto first = identify_keypoints(f.cloud, ref, w);
  // duplicate every chosen point at the end; the earlier copy must still win
  PointCloud dup(f.cloud.rows() + kNumKeypoints, 3);
  dup << f.cloud, first.keypoints;
  const auto again = identify_keypoints(dup, ref, w);
  for (int k = 0; k < kNumKeypoints; ++k) EXPECT_LT(again.index[static_cast<std::size_t>(k)], f.cloud.rows());
}

TEST(Identify, SelfIdentificationOnReference) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto w = small_encoder(seed);
    const auto rf = frame(200 + seed);
    const auto ref = make_reference(rf, w);
    EXPECT_EQ(ref.features.rows(), kNumKeypoints);
    EXPECT_LT((ref.features.rowwise().norm().array() - 1.0).abs().maxCoeff(), 1e-12);
    const auto id = identify_keypoints(ref.cloud, ref, w);
    for (int k = 0; k < kNumKeypoints; ++k) {
      EXPECT_GE(id.similarity[static_cast<std::size_t>(k)], 1.0 - 1e-5);
      EXPECT_LT((id.keypoints.row(k) - rf.keypoints.row(k)).norm(), 1e-12);
    }
  }
}

TEST(Identify, DegenerateAndErrorCases) {
  const auto w = small_encoder();
  const auto ref = make_reference(frame(300), w);
  PointCloud single(1, 3);
  single << 0.3, -0.2, 0.9;
  const auto id = identify_keypoints(single, ref, w);
  for (int k = 0; k < kNumKeypoints; ++k) {
    EXPECT_EQ(id.keypoints.row(k), single.row(0));
    EXPECT_EQ(id.index[static_cast<std::size_t>(k)], 0);
  }
  EXPECT_THROW(identify_keypoints(PointCloud(0, 3), ref, w), InputError);
  EXPECT_THROW(identify_keypoints(frame(1).cloud, ref, small_encoder(9)), ConfigError);
  EXPECT_THROW(make_reference(frame(1).cloud, PointCloud::Zero(3, 3), w), InputError);
}

TEST(Identify, PrefixOfDenseCloudIsLowerDensityRender) {
  const auto tmpl = bagsim::synthesize_template(0);
  const auto p = bagsim::sample_family(bagsim::Family::DC, 4);
  const auto dense = bagsim::render_frame(tmpl, p, 1024, 77);
  const auto sparse = bagsim::render_frame(tmpl, p, 256, 77);
  EXPECT_EQ(cloud_prefix(dense.cloud, 256), sparse.cloud);
  EXPECT_EQ(cloud_prefix(sparse.cloud, 1000).rows(), 256);
}

TEST(Track, ZeroMotionKeepsKeypoints) {
  const auto f = frame(400);
  TrackState st;
  st.keypoints.resize(kNumKeypoints, 3);
  for (int k = 0; k < kNumKeypoints; ++k) st.keypoints.row(k) = f.cloud.row(k * 17);
  const auto next = track_step(st, f.cloud, f.cloud);
  EXPECT_EQ(next.keypoints, st.keypoints);
  EXPECT_EQ(next.last_frame_index, 1);
  EXPECT_EQ(next.keypoint_ids, st.keypoint_ids);
}

TEST(Track, RigidTranslationWithinCloudResolution) {
  const auto f = frame(401, 512);
  const Eigen::RowVector3d v(0.013, -0.007, 0.004);
  const PointCloud moved = f.cloud.rowwise() + v;
  // nearest-neighbour spacing of the cloud
  double spacing = 0.0;
  for (Eigen::Index i = 0; i < f.cloud.rows(); ++i) {
    double nd = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < f.cloud.rows(); ++j)
      if (j != i) nd = std::min(nd, (f.cloud.row(i) - f.cloud.row(j)).norm());
    spacing = std::max(spacing, nd);
  }
  TrackState st;
  st.keypoints = f.keypoints;
  const auto next = track_step(st, f.cloud, moved);
  for (int k = 0; k < kNumKeypoints; ++k) EXPECT_LE((next.keypoints.row(k) - (f.keypoints.row(k) + v)).norm(), spacing);
}

TEST(Track, FollowsSimulatedSequence) {
  const auto tmpl = bagsim::synthesize_template(2);
  bagsim::EpisodeSpec spec{2, bagsim::Family::VC, 5, 40, 4096};
  const auto frames = bagsim::episode_frames(tmpl, spec);
  const double scale = encoder::canonicalize_cloud(frames[0].cloud).transform.scale;
  TrackState st;
  st.keypoints = frames[0].keypoints;
  for (std::size_t t = 1; t < frames.size(); ++t) {
    st = track_step(st, frames[t - 1].cloud, frames[t].cloud);
    const double err = (st.keypoints - frames[t].keypoints).rowwise().norm().maxCoeff() / scale;
    ASSERT_LE(err, 0.05) << "frame " << t;
  }
}

TEST(Track, Errors) {
  TrackState st;
  st.keypoints = PointCloud::Zero(kNumKeypoints, 3);
  const auto f = frame(402);
  EXPECT_THROW(track_step(st, f.cloud, PointCloud(0, 3)), InputError);
  st.mode = Mode::Reidentify;
  EXPECT_THROW(track_step(st, f.cloud, f.cloud), InputError);
  EXPECT_EQ(parse_mode("track"), Mode::Track);
  EXPECT_EQ(parse_mode(to_string(Mode::Reidentify)), Mode::Reidentify);
  EXPECT_THROW(parse_mode("tap"), InputError);
}

TEST(Reidentify, AgreesWithTrackingOnStaticSequence) {
  const auto w = small_encoder();
  const auto ref = make_reference(frame(500), w);
  const auto f = frame(501);
  TrackState track, reid;
  track.keypoints = reid.keypoints = identify_keypoints(f.cloud, ref, w).keypoints;
  reid.mode = Mode::Reidentify;
  for (int t = 0; t < 3; ++t) {
    track = track_step(track, f.cloud, f.cloud);
    reid = reidentify_step(reid, f.cloud, ref, w);
    EXPECT_EQ(track.keypoints, reid.keypoints);
    EXPECT_EQ(track.last_frame_index, reid.last_frame_index);
  }
}

TEST(Reidentify, EqualsIdentifyPerStepAndSelfMatches) {
  const auto w = small_encoder();
  const auto rf = frame(600);
  const auto ref = make_reference(rf, w);
  TrackState st;
  st.mode = Mode::Reidentify;
  st.keypoints = rf.keypoints;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto f = frame(610 + s);
    st = reidentify_step(st, f.cloud, ref, w);
    EXPECT_EQ(st.keypoints, identify_keypoints(f.cloud, ref, w).keypoints);
  }
  st = reidentify_step(st, ref.cloud, ref, w);
  EXPECT_LT((st.keypoints - rf.keypoints).cwiseAbs().maxCoeff(), 1e-12);
  TrackState tracking;
  EXPECT_THROW(reidentify_step(tracking, rf.cloud, ref, w), InputError);
}

TEST(Accuracy, PerfectAndMissedIdentification) {
  const auto w = small_encoder();
  const auto rf = frame(700);
  const auto ref = make_reference(rf, w);
  const auto perfect = identification_accuracy({{ref.cloud, rf.keypoints}}, ref, w);
  EXPECT_EQ(perfect.hits, kNumKeypoints);
  EXPECT_DOUBLE_EQ(perfect.rate(), 1.0);
  PointCloud far = rf.keypoints.rowwise() + Eigen::RowVector3d(100, 0, 0);
  EXPECT_EQ(identification_accuracy({{ref.cloud, far}}, ref, w).hits, 0);
  EXPECT_DOUBLE_EQ(AccuracyReport{}.rate(), 0.0);
}

}  // namespace
}  // namespace bagknot::matcher
