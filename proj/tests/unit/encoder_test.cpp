#include "bagknot/bagsim/surface.hpp"
#include "bagknot/encoder/infonce.hpp"
#include "bagknot/encoder/model.hpp"
#include "bagknot/encoder/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

namespace bagknot::encoder {
namespace {

using VecX = Eigen::VectorXd;
using Mat = nn::Matrix<double>;

VecX random_unit(Rng& rng, int d) {
  VecX v(d);
  for (int i = 0; i < d; ++i) v(i) = normal(rng);
  return v.normalized();
}

Mat random_unit_rows(Rng& rng, int m, int d) {
  Mat out(m, d);
  for (int j = 0; j < m; ++j) out.row(j) = random_unit(rng, d).transpose();
  return out;
}

// Direct evaluation of the printed ratio, no log-sum-exp.
double infonce_direct(const VecX& a, const VecX& p, const Mat& n, double tau) {
  const double pos = std::exp(a.dot(p) / tau);
  double den = pos;
  for (Eigen::Index j = 0; j < n.rows(); ++j) den += std::exp(n.row(j).dot(a) / tau);
  return -std::log(pos / den);
}

PointCloud random_cloud(Rng& rng, int n, double spread = 1.0) {
  PointCloud c(n, 3);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = uniform(rng, -spread, spread);
  return c;
}

bagsim::Frame bag_frame(std::uint64_t seed, int n_pc = 256, bagsim::Family f = bagsim::Family::VC) {
  const auto tmpl = bagsim::synthesize_template(static_cast<std::int64_t>(seed % 7));
  return bagsim::render_frame(tmpl, bagsim::sample_family(f, seed), n_pc, seed + 11);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

TEST(InfoNce, SingleNegativeClosedForm) {
  VecX a = VecX::Unit(4, 0);
  VecX p = a;
  Mat n = Mat::Zero(1, 4);
  n(0, 1) = 1.0;
  EXPECT_NEAR(infonce_loss<double>(a, p, n, 1.0), std::log(1.0 + std::exp(-1.0)), 1e-9);
  EXPECT_NEAR(infonce_loss<double>(a, p, n, 1.0), 0.313262, 1e-6);
}

TEST(InfoNce, UniformSimilarityGivesLogMPlusOne) {
  for (int m : {1, 150}) {
    for (double tau : {0.07, 1.0, 3.0}) {
      VecX a = VecX::Unit(8, 0);
      Mat n = a.transpose().replicate(m, 1);
      EXPECT_NEAR(infonce_loss<double>(a, a, n, tau), std::log(m + 1.0), 1e-9) << "m=" << m << " tau=" << tau;
    }
  }
}

TEST(InfoNce, SmallTemperatureDrivesLossToZero) {
  Rng rng = make_rng(3);
  VecX a = random_unit(rng, 16);
  Mat n = random_unit_rows(rng, 20, 16);
  double worst = -1.0;
  for (Eigen::Index j = 0; j < n.rows(); ++j) worst = std::max(worst, n.row(j).dot(a));
  ASSERT_LT(worst, 0.999);
  EXPECT_LT(infonce_loss<double>(a, a, n, 0.01), 1e-3);
}

TEST(InfoNce, MatchesDirectFormulaAndIsPositive) {
  Rng rng = make_rng(4);
  for (int t = 0; t < 50; ++t) {
    VecX a = random_unit(rng, 8), p = random_unit(rng, 8);
    Mat n = random_unit_rows(rng, 1 + t % 9, 8);
    const double tau = uniform(rng, 0.2, 2.0);
    const double loss = infonce_loss<double>(a, p, n, tau);
    EXPECT_GT(loss, 0.0);
    EXPECT_NEAR(loss, infonce_direct(a, p, n, tau), 1e-10);
  }
}

TEST(InfoNce, GradientsMatchCentralDifferences) {
  Rng rng = make_rng(5);
  const double h = 1e-5;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int d = 6, m = 1 + t % 7;
    VecX a = random_unit(rng, d), p = random_unit(rng, d);
    Mat n = random_unit_rows(rng, m, d);
    const double tau = uniform(rng, 0.3, 1.5);
    InfoNceGrad<double> g;
    infonce_loss<double>(a, p, n, tau, &g);
    auto probe = [&](double& x, double analytic) {
      const double x0 = x;
      x = x0 + h;
      const double up = infonce_direct(a, p, n, tau);
      x = x0 - h;
      const double down = infonce_direct(a, p, n, tau);
      x = x0;
      const double numeric = (up - down) / (2 * h);
      if (std::abs(numeric) + std::abs(analytic) > 1e-7) worst = std::max(worst, rel_err(analytic, numeric));
    };
    for (int i = 0; i < d; ++i) probe(a(i), g.anchor(i));
    for (int i = 0; i < d; ++i) probe(p(i), g.positive(i));
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < d; ++i) probe(n(j, i), g.negatives(j, i));
  }
  EXPECT_LE(worst, 1e-3);
}

TEST(InfoNce, RejectsBadInputs) {
  VecX a = VecX::Unit(3, 0);
  Mat n = Mat::Zero(1, 3);
  n(0, 1) = 1.0;
  EXPECT_THROW(infonce_loss<double>(a, a, n, 0.0), InputError);
  EXPECT_THROW(infonce_loss<double>(VecX(a * 1.01), a, n, 1.0), InputError);
  EXPECT_THROW(infonce_loss<double>(a, a, Mat(Mat::Zero(1, 3)), 1.0), InputError);
  EXPECT_THROW(infonce_loss<double>(a, a, Mat(0, 3), 1.0), InputError);
  EXPECT_NO_THROW(infonce_loss<double>(VecX(a * 1.0005), a, n, 1.0));
}

TEST(InfoNce, GraphNodeAgreesWithPerAnchorLoss) {
  Rng rng = make_rng(6);
  const int d = 5, m = 3;
  Mat A = random_unit_rows(rng, 4, d), B = random_unit_rows(rng, 6, d);
  const std::vector<int> anchors{0, 2}, positives{1, 5}, negatives{0, 2, 3, 4, 0, 1};
  const double tau = 0.5;
  nn::ParamStore<double> store;
  store.add("a", A);
  store.add("b", B);
  nn::Graph<double> g(&store);
  const nn::Var fa = g.param("a"), fb = g.param("b");
  const nn::Var loss = infonce_node(g, fa, fb, anchors, positives, negatives, m, tau);
  g.backward(loss);
  Mat ga = Mat::Zero(4, d), gb = Mat::Zero(6, d);
  double expected = 0.0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    Mat neg(m, d);
    for (int j = 0; j < m; ++j) neg.row(j) = B.row(negatives[i * m + static_cast<std::size_t>(j)]);
    InfoNceGrad<double> gr;
    expected += infonce_loss<double>(A.row(anchors[i]).transpose(), B.row(positives[i]).transpose(), neg, tau, &gr);
    ga.row(anchors[i]) += gr.anchor.transpose() / 2.0;
    gb.row(positives[i]) += gr.positive.transpose() / 2.0;
    for (int j = 0; j < m; ++j) gb.row(negatives[i * m + static_cast<std::size_t>(j)]) += gr.negatives.row(j) / 2.0;
  }
  EXPECT_NEAR(g.value(loss)(0, 0), expected / 2.0, 1e-12);
  EXPECT_LT((store.grad(0) - ga).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((store.grad(1) - gb).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Canonicalize, Examples) {
  PointCloud ball(2, 3);
  ball << 1, 0, 0, -1, 0, 0;
  const auto c = canonicalize_cloud(ball);
  EXPECT_EQ(c.points, ball);
  EXPECT_EQ(c.transform.scale, 1.0);
  EXPECT_EQ(c.transform.center, Vec3::Zero());

  Rng rng = make_rng(7);
  const PointCloud cloud = random_cloud(rng, 50);
  const auto base = canonicalize_cloud(cloud);
  const PointCloud shifted = cloud.rowwise() + Eigen::RowVector3d(5, 5, 5);
  EXPECT_LT((canonicalize_cloud(shifted).points - base.points).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((canonicalize_cloud(PointCloud(cloud * 3.0)).points - base.points).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((base.transform.invert(base.points) - cloud).cwiseAbs().maxCoeff(), 1e-12);
  double max_r = 0.0;
  for (Eigen::Index i = 0; i < base.points.rows(); ++i) max_r = std::max(max_r, base.points.row(i).norm());
  EXPECT_NEAR(max_r, 1.0, 1e-12);
  EXPECT_LT(base.points.colwise().mean().norm(), 1e-12);
}

TEST(Canonicalize, Errors) {
  EXPECT_THROW(canonicalize_cloud(PointCloud(0, 3)), InputError);
  EXPECT_THROW(canonicalize_cloud(PointCloud(PointCloud::Ones(4, 3))), InputError);
  PointCloud bad = PointCloud::Zero(3, 3);
  bad(1, 1) = std::nan("");
  EXPECT_THROW(canonicalize_cloud(bad), InputError);
}

TEST(GeometricOrder, IsAPermutationDeterminedByCoordinates) {
  Rng rng = make_rng(8);
  const PointCloud cloud = random_cloud(rng, 200);
  const auto order = geometric_order(cloud);
  EXPECT_EQ(std::set<int>(order.begin(), order.end()).size(), 200u);
  std::vector<int> perm(200);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  PointCloud shuffled(200, 3);
  for (int i = 0; i < 200; ++i) shuffled.row(i) = cloud.row(perm[static_cast<std::size_t>(i)]);
  const auto order2 = geometric_order(shuffled);
  for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(shuffled.row(order2[i]), cloud.row(order[i]));
}

TEST(FarthestPointSample, SquareCornersMatchBruteForce) {
  PointCloud sq(4, 3);
  sq << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
  const auto picked = farthest_point_sample(sq, 2);
  double best = -1.0;
  std::set<std::pair<int, int>> best_pairs;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      const double d = (sq.row(i) - sq.row(j)).norm();
      if (d > best + 1e-12) {
        best = d;
        best_pairs.clear();
      }
      if (std::abs(d - best) <= 1e-12) best_pairs.insert({i, j});
    }
  ASSERT_EQ(picked.size(), 2u);
  EXPECT_TRUE(best_pairs.count({std::min(picked[0], picked[1]), std::max(picked[0], picked[1])}));
  EXPECT_EQ(picked[0], 0);  // lexicographically smallest corner
  EXPECT_EQ(picked[1], 2);
}

TEST(FarthestPointSample, ExhaustionDeterminismAndErrors) {
  Rng rng = make_rng(9);
  const PointCloud cloud = random_cloud(rng, 40);
  const auto all = farthest_point_sample(cloud, 40);
  EXPECT_EQ(std::set<int>(all.begin(), all.end()).size(), 40u);
  EXPECT_EQ(all, farthest_point_sample(cloud, 40));
  EXPECT_THROW(farthest_point_sample(cloud, 41), InputError);
  // greedy max-min property against a direct recomputation
  const auto k = farthest_point_sample(cloud, 10);
  for (std::size_t s = 1; s < k.size(); ++s) {
    auto min_dist = [&](int i) {
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < s; ++t) m = std::min(m, (cloud.row(i) - cloud.row(k[t])).squaredNorm());
      return m;
    };
    const double chosen = min_dist(k[s]);
    for (int i = 0; i < 40; ++i) EXPECT_LE(min_dist(i), chosen);
  }
}

// Brute force: all in-ball indices ascending, truncate, pad with the nearest.
std::vector<int> ball_oracle(const PointCloud& pts, int c, double r, int K) {
  std::vector<std::pair<int, double>> inside;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const double d = (pts.row(i) - pts.row(c)).squaredNorm();
    if (d <= r * r) inside.push_back({static_cast<int>(i), d});
  }
  if (inside.size() > static_cast<std::size_t>(K)) inside.resize(static_cast<std::size_t>(K));
  std::vector<int> out;
  for (auto& [i, d] : inside) out.push_back(i);
  int nearest = c;
  double nd = std::numeric_limits<double>::infinity();
  for (auto& [i, d] : inside)
    if (d < nd) {
      nd = d;
      nearest = i;
    }
  while (out.size() < static_cast<std::size_t>(K)) out.push_back(nearest);
  return out;
}

TEST(BallQuery, EqualsBruteForceOracle) {
  Rng rng = make_rng(10);
  for (int t = 0; t < 20; ++t) {
    const int n = 32 + static_cast<int>(rng() % 481);
    const PointCloud pts = random_cloud(rng, n);
    const double r = uniform(rng, 0.1, 0.6);
    const int K = 1 + static_cast<int>(rng() % 40);
    std::vector<int> centroids;
    for (int c = 0; c < 16; ++c) centroids.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(n)));
    const auto got = ball_query(pts, centroids, r, K);
    ASSERT_EQ(got.size(), centroids.size() * static_cast<std::size_t>(K));
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      const auto want = ball_oracle(pts, centroids[c], r, K);
      EXPECT_TRUE(std::equal(want.begin(), want.end(), got.begin() + static_cast<std::ptrdiff_t>(c * K)));
    }
  }
}

TEST(BallQuery, BoundaryAndPadding) {
  PointCloud pts(3, 3);
  pts << 0, 0, 0, 0.5 + 1e-9, 0, 0, 0.5, 0, 0;
  EXPECT_EQ(ball_query(pts, {0}, 0.5, 3), (std::vector<int>{0, 2, 0}));
  PointCloud lone(2, 3);
  lone << 0, 0, 0, 10, 0, 0;
  EXPECT_EQ(ball_query(lone, {1}, 0.5, 4), (std::vector<int>{1, 1, 1, 1}));
  PointCloud cluster = PointCloud::Zero(8, 3);
  for (int i = 0; i < 8; ++i) cluster(i, 0) = 0.01 * i;
  EXPECT_EQ(ball_query(cluster, {5}, 1.0, 4), (std::vector<int>{0, 1, 2, 3}));
  EXPECT_THROW(ball_query(cluster, {0}, 0.0, 4), InputError);
}

TEST(ThreeNn, WeightsAreNormalizedInverseDistances) {
  Rng rng = make_rng(11);
  const PointCloud fine = random_cloud(rng, 30), coarse = random_cloud(rng, 7);
  const auto ip = three_nn(fine, coarse);
  ASSERT_EQ(ip.per_row, 3);
  for (Eigen::Index i = 0; i < fine.rows(); ++i) {
    std::vector<std::pair<double, int>> d;
    for (Eigen::Index j = 0; j < coarse.rows(); ++j) d.push_back({(fine.row(i) - coarse.row(j)).norm(), static_cast<int>(j)});
    std::sort(d.begin(), d.end());
    double total = 0.0;
    for (int k = 0; k < 3; ++k) total += 1.0 / (d[static_cast<std::size_t>(k)].first + 1e-8);
    for (int k = 0; k < 3; ++k) {
      const auto at = static_cast<std::size_t>(i * 3 + k);
      EXPECT_EQ(ip.index[at], d[static_cast<std::size_t>(k)].second);
      EXPECT_NEAR(ip.weight[at], 1.0 / (d[static_cast<std::size_t>(k)].first + 1e-8) / total, 1e-12);
    }
  }
}

class EncoderModel : public ::testing::Test {
 protected:
  static EncoderConfig small() {
    auto c = EncoderConfig::desk();
    c.d = 16;
    c.sa_levels = {{48, 0.3, 8, {8, 8}}, {12, 0.6, 8, {16}}};
    c.fp_widths = {{16}, {16}};
    c.head_widths = {16};
    return c;
  }
};

TEST_F(EncoderModel, UnitNormOutputOnRandomClouds) {
  Rng rng = make_rng(12);
  for (int t = 0; t < 20; ++t) {
    auto cfg = small();
    cfg.seed = static_cast<std::uint64_t>(t);
    const auto w = EncoderWeights::initial(cfg);
    const auto f = encode(random_cloud(rng, 64 + t * 5), w);
    EXPECT_LT((f.features.rowwise().norm().array() - 1.0).abs().maxCoeff(), 1e-5);
    const RowMatrix sims = f.features * f.features.transpose();
    EXPECT_LE(sims.maxCoeff(), 1.0 + 1e-5);
    EXPECT_GE(sims.minCoeff(), -1.0 - 1e-5);
  }
}

TEST_F(EncoderModel, PermutationEquivariance) {
  Rng rng = make_rng(13);
  const auto w = EncoderWeights::initial(small());
  const PointCloud cloud = bag_frame(3).cloud;
  std::vector<int> perm(static_cast<std::size_t>(cloud.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  PointCloud shuffled(cloud.rows(), 3);
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) shuffled.row(i) = cloud.row(perm[static_cast<std::size_t>(i)]);
  const auto a = encode(cloud, w), b = encode(shuffled, w);
  for (Eigen::Index i = 0; i < cloud.rows(); ++i)
    EXPECT_EQ(b.features.row(i), a.features.row(perm[static_cast<std::size_t>(i)]));
}

TEST_F(EncoderModel, TranslationAndScaleInvariance) {
  const auto w = EncoderWeights::initial(small());
  for (std::uint64_t s = 0; s < 5; ++s) {
    const PointCloud cloud = bag_frame(20 + s).cloud;
    const auto base = encode(cloud, w);
    const PointCloud moved = (cloud * 2.5).rowwise() + Eigen::RowVector3d(5, -3, 5);
    const auto other = encode(moved, w);
    EXPECT_LE((other.features - base.features).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST_F(EncoderModel, DuplicatePointsGetIdenticalFeatures) {
  PointCloud cloud = bag_frame(30, 128).cloud;
  cloud.row(77) = cloud.row(5);
  const auto f = encode(cloud, EncoderWeights::initial(small()));
  EXPECT_EQ(f.features.row(77), f.features.row(5));
}

TEST_F(EncoderModel, FeatureFieldKeepsInputOrderAndTransform) {
  const PointCloud cloud = bag_frame(31, 128).cloud;
  const auto f = encode(cloud, EncoderWeights::initial(small()));
  EXPECT_EQ(f.features.rows(), cloud.rows());
  EXPECT_EQ(f.features.cols(), 16);
  EXPECT_LT((f.transform.invert(f.canonical_points) - cloud).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(EncoderModel, ParameterGradientsMatchFiniteDifferences) {
  auto cfg = small();
  auto params = init_encoder_params<double>(cfg, 1);
  const PointCloud cloud = bag_frame(32, 96).cloud;
  const auto plan = make_plan(cloud, cfg);
  Rng rng = make_rng(14);
  Mat target(cloud.rows(), cfg.d);
  for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = uniform(rng, -0.3, 0.3);
  auto loss_at = [&](bool record) {
    nn::Graph<double> g(&params, record);
    const nn::Var l = nn::mse(g, encoder_forward(g, plan, cfg), target);
    const double v = g.value(l)(0, 0);
    if (record) g.backward(l);
    return v;
  };
  params.zero_grad();
  loss_at(true);
  double worst = 0.0;
  for (int t = 0; t < 40; ++t) {
    const int p = static_cast<int>(rng() % static_cast<std::uint64_t>(params.size()));
    auto& v = params.value(p);
    const auto e = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(v.size()));
    const double x0 = v.data()[e], h = 1e-6;
    v.data()[e] = x0 + h;
    const double up = loss_at(false);
    v.data()[e] = x0 - h;
    const double down = loss_at(false);
    v.data()[e] = x0;
    const double numeric = (up - down) / (2 * h), analytic = params.grad(p).data()[e];
    if (std::abs(numeric) + std::abs(analytic) > 1e-8) worst = std::max(worst, rel_err(analytic, numeric));
  }
  EXPECT_LE(worst, 1e-3);
}

TEST(EncoderConfigTest, JsonKvAndValidation) {
  auto c = EncoderConfig::desk();
  c.seed = 42;
  const auto back = EncoderConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());
  c.lr = 0.5;
  EXPECT_EQ(back.hash(), c.hash());  // schedule is not architecture

  const auto kv = KeyValueConfig::parse("enc.d = 32\nenc.sa1 = 64, 0.25, 8, 8, 16\nenc.head = 32\nenc.tau = 0.1\n");
  const auto k = EncoderConfig::from_kv(kv, "enc", EncoderConfig::desk());
  EXPECT_EQ(k.d, 32);
  EXPECT_EQ(k.sa_levels[0].centroids, 64);
  EXPECT_EQ(k.sa_levels[0].widths, (std::vector<int>{8, 16}));
  EXPECT_DOUBLE_EQ(k.tau, 0.1);

  auto bad = EncoderConfig::desk();
  bad.tau = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = EncoderConfig::desk();
  bad.sa_levels[1].radius = 0.1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = EncoderConfig::desk();
  bad.optimizer = "lbfgs";
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(EncoderConfigTest, PaperDefaults) {
  const EncoderConfig c;
  EXPECT_EQ(c.d, 512);
  EXPECT_EQ(c.sa_levels[0].centroids, 512);
  EXPECT_EQ(c.sa_levels[1].neighbors, 64);
  EXPECT_DOUBLE_EQ(c.tau, 0.07);
  EXPECT_EQ(c.m, 150);
  EXPECT_EQ(c.batch_size, 16);
  EXPECT_EQ(c.epochs, 20);
}

TEST(EncoderCheckpoint, RoundTripAndCorruption) {
  const auto dir = std::filesystem::temp_directory_path() / "bagknot_encoder_ckpt";
  std::filesystem::remove_all(dir);
  auto w = EncoderWeights::initial(EncoderConfig::desk());
  w.loss_curve = {2.0, 1.5};
  save_encoder(dir, w);
  const auto back = load_encoder(dir);
  EXPECT_EQ(back.hash(), w.hash());
  EXPECT_EQ(back.loss_curve, w.loss_curve);
  const auto cloud = bag_frame(40, 128).cloud;
  EXPECT_EQ(encode(cloud, back).features, encode(cloud, w).features);

  const auto manifest = io::read_json(dir / "manifest.json");
  const auto file = dir / manifest.at("params")[0].at("file").get<std::string>();
  std::filesystem::resize_file(file, std::filesystem::file_size(file) - 4);
  EXPECT_THROW(load_encoder(dir), IntegrityError);
  std::filesystem::remove_all(dir);
}

corrdata::CorrespondenceDataset tiny_dataset(int pairs_wanted, std::uint64_t seed) {
  bagsim::CorpusSpec spec;
  spec.families = {bagsim::Family::VC, bagsim::Family::HC};
  spec.per_cell = 2;
  spec.length = 3;
  spec.n_pc = 256;
  spec.seed = seed;
  const auto seqs = bagsim::generate_corpus({bagsim::synthesize_template(1)}, spec);
  auto pairs = corrdata::build_pairs(seqs, 1.0, seed);
  pairs.resize(static_cast<std::size_t>(pairs_wanted));
  return corrdata::make_dataset(seqs, pairs, 1.0, seed);
}

TEST(EncoderTraining, SameSeedSameWeights) {
  const auto ds = tiny_dataset(10, 3);
  auto cfg = EncoderConfig::desk();
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.m = 20;
  const auto a = train_encoder(ds, cfg), b = train_encoder(ds, cfg);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  cfg.seed = 1;
  EXPECT_NE(train_encoder(ds, cfg).hash(), a.hash());
}

TEST(EncoderTraining, LossDecreasesAndPositivesBeatNegatives) {
  const auto ds = tiny_dataset(40, 4);
  auto cfg = EncoderConfig::desk();
  cfg.epochs = 6;
  cfg.batch_size = 8;
  cfg.m = 40;
  cfg.lr = 1e-2;
  const auto w = train_encoder(ds, cfg);
  ASSERT_EQ(w.loss_curve.size(), 6u);
  EXPECT_LT(w.loss_curve.back(), w.loss_curve.front());

  // held-out pair from a different corpus seed
  const auto held = tiny_dataset(1, 99);
  const auto& fa = held.frames[static_cast<std::size_t>(held.pairs[0].a)];
  const auto& fb = held.frames[static_cast<std::size_t>(held.pairs[0].b)];
  const auto ea = encode(with_keypoints(fa.cloud, fa.keypoints), w);
  const auto eb = encode(with_keypoints(fb.cloud, fb.keypoints), w);
  const auto n = fa.cloud.rows();
  double pos = 0.0, neg = 0.0;
  for (int k = 0; k < kNumKeypoints; ++k) {
    pos += ea.features.row(n + k).dot(eb.features.row(n + k));
    for (Eigen::Index j = 0; j < n; ++j) neg += ea.features.row(n + k).dot(eb.features.row(j));
  }
  EXPECT_GT(pos / kNumKeypoints, neg / (kNumKeypoints * static_cast<double>(n)));
}

TEST(EncoderTraining, Errors) {
  corrdata::CorrespondenceDataset empty;
  EXPECT_THROW(train_encoder(empty, EncoderConfig::desk()), InputError);
}

TEST(EncoderTraining, NegativesRespectExclusionRadius) {
  const auto ds = tiny_dataset(1, 5);
  const auto cfg = EncoderConfig::desk();
  const auto& f = ds.frames[0];
  const auto prep = prepare_frame(f.cloud, f.keypoints, cfg);
  Rng rng = make_rng(1);
  const Vec3 centre = prep.plan.canonical.points.row(prep.cloud_rows).transpose();
  const auto neg = sample_negatives(prep, centre, 150, 0.05, rng);
  ASSERT_EQ(neg.size(), 150u);
  EXPECT_EQ(std::set<int>(neg.begin(), neg.end()).size(), 150u);
  for (int r : neg) {
    EXPECT_LT(r, prep.cloud_rows);
    EXPECT_GT((prep.plan.canonical.points.row(r).transpose() - centre).norm(), 0.05);
  }
}

}  // namespace
}  // namespace bagknot::encoder
