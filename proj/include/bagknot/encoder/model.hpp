#pragma once

// Hierarchical point-set encoder: set-abstraction levels (sampling, ball
// grouping, shared MLP, max pooling), feature propagation back to every
// input point, and a per-point head with unit-norm output.
//
// Points are processed in a fixed order derived from their canonical
// coordinates, so index-based rules (sampling start, ball membership,
// tie-breaks) depend on geometry only and the encoder is equivariant to
// input permutations.

#include "bagknot/encoder/config.hpp"
#include "bagknot/encoder/geometry.hpp"
#include "bagknot/nn/ops.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace bagknot::encoder {

struct LevelPlan {
  PointCloud xyz;            // centroid coordinates
  std::vector<int> groups;   // centroids x K indices into the previous level
  nn::Matrix<double> rel;    // (centroids x K) x 3, (p - c) / r
  int k = 0;
};

/// Geometry of one canonical cloud, computed once and reused.
struct EncoderPlan {
  CanonicalCloud canonical;
  std::vector<int> order;  // sorted position -> input row
  PointCloud points;       // canonical points in sorted order
  std::vector<LevelPlan> levels;
  std::vector<Interpolation> interp;  // interp[l]: level l+1 -> level l (level 0 = points)
};

inline EncoderPlan make_plan(const PointCloud& cloud, const EncoderConfig& cfg) {
  EncoderPlan plan;
  plan.canonical = canonicalize_cloud(cloud);
  plan.order = geometric_order(plan.canonical.points);
  plan.points.resize(cloud.rows(), 3);
  for (std::size_t i = 0; i < plan.order.size(); ++i)
    plan.points.row(static_cast<Eigen::Index>(i)) = plan.canonical.points.row(plan.order[i]);

  plan.levels.reserve(cfg.sa_levels.size());  // `prev` points into this vector
  const PointCloud* prev = &plan.points;
  for (std::size_t l = 0; l < cfg.sa_levels.size(); ++l) {
    const auto& spec = cfg.sa_levels[l];
    LevelPlan lp;
    const int k = std::min<int>(spec.centroids, static_cast<int>(prev->rows()));
    const auto centroids = farthest_point_sample(*prev, k);
    lp.k = spec.neighbors;
    lp.groups = ball_query(*prev, centroids, spec.radius, spec.neighbors);
    lp.xyz.resize(k, 3);
    for (int c = 0; c < k; ++c) lp.xyz.row(c) = prev->row(centroids[static_cast<std::size_t>(c)]);
    const auto rows = static_cast<Eigen::Index>(lp.groups.size());
    lp.rel.resize(rows, 3);
    for (Eigen::Index r = 0; r < rows; ++r)
      lp.rel.row(r) = (prev->row(lp.groups[static_cast<std::size_t>(r)]) - lp.xyz.row(r / spec.neighbors)) / spec.radius;
    plan.levels.push_back(std::move(lp));
    prev = &plan.levels.back().xyz;
  }
  const PointCloud* fine = &plan.points;
  for (std::size_t l = 0; l < plan.levels.size(); ++l) {
    plan.interp.push_back(three_nn(*fine, plan.levels[l].xyz));
    fine = &plan.levels[l].xyz;
  }
  return plan;
}

inline std::string layer_name(const std::string& block, std::size_t i) {
  return block + "." + std::to_string(i);
}

/// Fresh parameters: uniform fan-in scaling, He gain before ReLU.
template <class T = float>
nn::ParamStore<T> init_encoder_params(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::ParamStore<T> p;
  Rng rng = make_rng(seed, {0xE2C0});
  const double he = std::sqrt(2.0);
  auto mlp = [&](const std::string& block, int in, const std::vector<int>& widths, bool relu_last) {
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const bool relu = relu_last || i + 1 < widths.size();
      p.add_uniform(layer_name(block, i) + ".w", in, widths[i], rng, relu ? he : 1.0);
      p.add_zeros(layer_name(block, i) + ".b", 1, widths[i]);
      in = widths[i];
    }
    return in;
  };
  const auto L = cfg.sa_levels.size();
  std::vector<int> sa_out;
  for (std::size_t l = 0; l < L; ++l)
    sa_out.push_back(mlp("sa" + std::to_string(l + 1), 3 + (l == 0 ? 3 : sa_out.back()), cfg.sa_levels[l].widths, true));
  int cur = sa_out.back();
  for (std::size_t b = 0; b < L; ++b) {
    const std::size_t l = L - 1 - b;
    const int skip = l == 0 ? 3 : sa_out[l - 1];
    cur = mlp("fp" + std::to_string(b + 1), cur + skip, cfg.fp_widths[b], true);
  }
  auto head = cfg.head_widths;
  head.push_back(cfg.d);
  mlp("head", cur, head, false);
  return p;
}

namespace detail {
template <class T>
nn::Var mlp(nn::Graph<T>& g, nn::Var x, const std::string& block, std::size_t layers, bool relu_last) {
  for (std::size_t i = 0; i < layers; ++i) {
    x = nn::linear(g, x, layer_name(block, i));
    if (relu_last || i + 1 < layers) x = nn::relu(g, x);
  }
  return x;
}
}  // namespace detail

/// Per-point unit features in the plan's sorted order (rows = points).
template <class T>
nn::Var encoder_forward(nn::Graph<T>& g, const EncoderPlan& plan, const EncoderConfig& cfg) {
  const auto L = cfg.sa_levels.size();
  std::vector<nn::Var> feat(L + 1);
  const nn::Var abs0 = g.constant(plan.points.template cast<T>());
  feat[0] = abs0;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& lp = plan.levels[l];
    nn::Var grouped;
    if (l == 0) {
      // first level sees [relative xyz / r, absolute xyz]
      nn::Matrix<T> in(lp.rel.rows(), 6);
      for (Eigen::Index r = 0; r < in.rows(); ++r) {
        in.row(r).template head<3>() = lp.rel.row(r).template cast<T>();
        in.row(r).template tail<3>() = plan.points.row(lp.groups[static_cast<std::size_t>(r)]).template cast<T>();
      }
      grouped = g.constant(std::move(in));
    } else {
      grouped = nn::concat_cols(g, g.constant(lp.rel.template cast<T>()), nn::gather_rows(g, feat[l], lp.groups));
    }
    nn::Var h = detail::mlp(g, grouped, "sa" + std::to_string(l + 1), cfg.sa_levels[l].widths.size(), true);
    feat[l + 1] = nn::maxpool_groups(g, h, lp.k);
    nn::check_finite(g, feat[l + 1], "set-abstraction level " + std::to_string(l + 1));
  }
  nn::Var cur = feat[L];
  for (std::size_t b = 0; b < L; ++b) {
    const std::size_t l = L - 1 - b;
    const auto& ip = plan.interp[l];
    std::vector<T> w(ip.weight.begin(), ip.weight.end());
    nn::Var up = nn::weighted_gather(g, cur, ip.index, std::move(w), ip.per_row);
    cur = detail::mlp(g, nn::concat_cols(g, up, feat[l]), "fp" + std::to_string(b + 1), cfg.fp_widths[b].size(), true);
    nn::check_finite(g, cur, "feature-propagation block " + std::to_string(b + 1));
  }
  cur = detail::mlp(g, cur, "head", cfg.head_widths.size() + 1, false);
  nn::check_finite(g, cur, "head");
  return nn::l2_normalize_rows(g, cur);
}

/// Per-point features in input order, stored in double.
struct FeatureField {
  RowMatrix features;  // n x d, unit rows
  CanonicalTransform transform;
  PointCloud canonical_points;  // input order
};

/// Trained (or freshly initialized) encoder parameters plus metadata.
struct EncoderWeights {
  EncoderConfig config;
  nn::ParamStore<float> params;
  std::vector<double> loss_curve;
  io::json meta = io::json::object();

  static EncoderWeights initial(const EncoderConfig& cfg) {
    return EncoderWeights{cfg, init_encoder_params<float>(cfg, cfg.seed), {}, io::json::object()};
  }

  std::string hash() const {
    return hex64(Fnv1a().update(config.hash()).update(params.content_hash()).digest());
  }
};

inline FeatureField encode_plan(const EncoderPlan& plan, const EncoderWeights& weights) {
  nn::Graph<float> g(weights.params);
  const nn::Var out = encoder_forward(g, plan, weights.config);
  const auto& f = g.value(out);
  FeatureField field;
  field.transform = plan.canonical.transform;
  field.canonical_points = plan.canonical.points;
  field.features.resize(f.rows(), f.cols());
  for (std::size_t i = 0; i < plan.order.size(); ++i) {
    const Eigen::RowVectorXd row = f.row(static_cast<Eigen::Index>(i)).cast<double>();
    const double n = row.norm();
    if (!(n > 0.0)) throw NumericError("encoder head produced a zero feature");
    field.features.row(plan.order[i]) = row / n;
  }
  return field;
}

/// Features for every point of `cloud` (canonicalized internally).
inline FeatureField encode(const PointCloud& cloud, const EncoderWeights& weights) {
  return encode_plan(make_plan(cloud, weights.config), weights);
}

inline void save_encoder(const std::filesystem::path& dir, const EncoderWeights& w) {
  std::filesystem::create_directories(dir);
  io::json manifest{{"kind", "encoder-checkpoint"},
                    {"format_version", 1},
                    {"config", w.config.to_json()},
                    {"config_hash", w.config.hash()},
                    {"weights_hash", w.hash()},
                    {"loss_curve", w.loss_curve},
                    {"epoch", w.loss_curve.size()},
                    {"meta", w.meta}};
  manifest["params"] = w.params.save(dir);
  io::write_json(dir / "manifest.json", manifest);
}

inline EncoderWeights load_encoder(const std::filesystem::path& dir) {
  const auto manifest = io::read_json(dir / "manifest.json");
  if (manifest.value("kind", "") != "encoder-checkpoint") {
    throw IntegrityError("not an encoder checkpoint: " + dir.string());
  }
  EncoderWeights w;
  w.config = EncoderConfig::from_json(manifest.at("config"));
  if (w.config.hash() != manifest.at("config_hash").get<std::string>()) {
    throw IntegrityError("encoder checkpoint config hash mismatch");
  }
  w.params = init_encoder_params<float>(w.config, 0);
  w.params.load(dir, manifest.at("params"));
  w.loss_curve = manifest.at("loss_curve").get<std::vector<double>>();
  w.meta = manifest.value("meta", io::json::object());
  if (!w.params.all_finite()) throw IntegrityError("encoder checkpoint holds non-finite values");
  if (w.hash() != manifest.at("weights_hash").get<std::string>()) {
    throw IntegrityError("encoder checkpoint weights hash mismatch");
  }
  return w;
}

}  // namespace bagknot::encoder
