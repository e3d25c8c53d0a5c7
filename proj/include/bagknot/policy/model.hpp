#pragma once

// Keypoint-conditioned diffusion transformer.
//
// The observation is two tokens: an MLP embedding of the flattened keypoints
// and one of the joint state. Each of the H action steps becomes a token via
// a shared linear map plus a learned position embedding. Every layer applies
// bidirectional self-attention over action tokens, cross-attention to the
// observation tokens and a position-wise MLP, each modulated by shift, scale
// and gate vectors computed from the diffusion step (zero-initialised, so
// a fresh layer is the identity).

#include "bagknot/core/array_io.hpp"
#include "bagknot/core/types.hpp"
#include "bagknot/nn/ops.hpp"
#include "bagknot/policy/config.hpp"
#include "bagknot/policy/schedule.hpp"

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace bagknot::policy {

inline std::string block_name(int layer, const char* part) {
  return "block" + std::to_string(layer) + "." + part;
}

template <class T>
nn::ParamStore<T> init_policy_params(const PolicyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::ParamStore<T> p;
  Rng rng = make_rng(seed, {0xD17});
  const int D = cfg.D;
  auto linear = [&](const std::string& name, int in, int out) {
    p.add_uniform(name + ".w", in, out, rng, 1.0);
    p.add_zeros(name + ".b", 1, out);
  };
  auto zero_linear = [&](const std::string& name, int in, int out) {
    p.add_zeros(name + ".w", in, out);
    p.add_zeros(name + ".b", 1, out);
  };
  linear("obs_x.0", kKeypointDim, D);
  linear("obs_x.1", D, D);
  linear("obs_s.0", kJointDim, D);
  linear("obs_s.1", D, D);
  p.add_normal("obs_type", 2, D, rng, 0.02);
  linear("act_in", kJointDim, D);
  p.add_normal("act_pos", cfg.H, D, rng, 0.02);
  linear("t.0", D, D);
  linear("t.1", D, D);
  for (int l = 0; l < cfg.layers; ++l) {
    zero_linear(block_name(l, "ada"), D, 9 * D);
    for (const char* part : {"sa.q", "sa.k", "sa.v", "sa.o", "ca.q", "ca.k", "ca.v", "ca.o"})
      linear(block_name(l, part), D, D);
    linear(block_name(l, "mlp.0"), D, cfg.mlp_ratio * D);
    linear(block_name(l, "mlp.1"), cfg.mlp_ratio * D, D);
  }
  zero_linear("final.ada", D, 2 * D);
  zero_linear("final.out", D, kJointDim);
  return p;
}

/// Sinusoidal embedding of integer diffusion steps, one row per step.
template <class T>
nn::Matrix<T> timestep_embedding(const std::vector<int>& steps, int D) {
  const int half = D / 2;
  nn::Matrix<T> e = nn::Matrix<T>::Zero(static_cast<Eigen::Index>(steps.size()), D);
  for (std::size_t b = 0; b < steps.size(); ++b)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double a = steps[b] * freq;
      e(static_cast<Eigen::Index>(b), i) = static_cast<T>(std::cos(a));
      e(static_cast<Eigen::Index>(b), half + i) = static_cast<T>(std::sin(a));
    }
  return e;
}

template <class T>
nn::Var mlp2(nn::Graph<T>& g, nn::Var x, const std::string& prefix) {
  return nn::linear(g, nn::silu(g, nn::linear(g, x, prefix + ".0")), prefix + ".1");
}

/// Observation tokens for B samples: x is B x 30, s is B x 26 (both
/// standardized). Rows alternate keypoint token, state token per sample.
template <class T>
nn::Var embed_observation_node(nn::Graph<T>& g, nn::Var x, nn::Var s) {
  const nn::Var zx = mlp2(g, x, "obs_x");
  const nn::Var zs = mlp2(g, s, "obs_s");
  const auto B = static_cast<int>(g.rows(zx));
  std::vector<int> interleave;
  for (int b = 0; b < B; ++b) {
    interleave.push_back(b);
    interleave.push_back(B + b);
  }
  return nn::gather_rows(g, nn::concat_rows(g, zx, zs), std::move(interleave));
}

/// Predicted noise (B*H x 26) for noised chunks (B*H x 26), one diffusion
/// step per sample and observation tokens z_obs (2B x D).
template <class T>
nn::Var predict_noise_node(nn::Graph<T>& g, const PolicyConfig& cfg, nn::Var noised, const std::vector<int>& steps,
                           nn::Var z_obs) {
  const auto B = static_cast<Eigen::Index>(steps.size());
  const Eigen::Index H = cfg.H;
  const int D = cfg.D;
  if (g.rows(noised) != B * H || g.cols(noised) != kJointDim) throw InputError("predict_noise: noised chunk shape");
  if (g.rows(z_obs) != 2 * B || g.cols(z_obs) != D) throw InputError("predict_noise: observation shape");
  for (int k : steps)
    if (k < 0 || k >= cfg.K) throw InputError("diffusion step " + std::to_string(k) + " outside [0, K)");

  const nn::Var ctx = nn::add_tiled(g, z_obs, g.param("obs_type"));
  nn::Var x = nn::add_tiled(g, nn::linear(g, noised, "act_in"), g.param("act_pos"));
  const nn::Var temb = g.constant(timestep_embedding<T>(steps, D));
  const nn::Var c = nn::silu(g, mlp2(g, temb, "t"));

  auto modulated = [&](nn::Var ada, int sub, nn::Var input) {
    const nn::Var shift = nn::slice_cols(g, ada, 3 * sub * D, D);
    const nn::Var scale = nn::slice_cols(g, ada, (3 * sub + 1) * D, D);
    return nn::modulate(g, nn::layernorm(g, input), shift, scale, H);
  };
  auto gate = [&](nn::Var ada, int sub) { return nn::slice_cols(g, ada, (3 * sub + 2) * D, D); };

  for (int l = 0; l < cfg.layers; ++l) {
    const auto name = [l](const char* part) { return block_name(l, part); };
    const nn::Var ada = nn::linear(g, c, name("ada"));

    nn::Var h = modulated(ada, 0, x);
    nn::Var a = nn::attention(g, nn::linear(g, h, name("sa.q")), nn::linear(g, h, name("sa.k")),
                              nn::linear(g, h, name("sa.v")), B, H, H, cfg.heads);
    x = nn::gated_residual(g, x, nn::linear(g, a, name("sa.o")), gate(ada, 0), H);
    nn::check_finite(g, x, name("self-attention"));

    h = modulated(ada, 1, x);
    a = nn::attention(g, nn::linear(g, h, name("ca.q")), nn::linear(g, ctx, name("ca.k")),
                      nn::linear(g, ctx, name("ca.v")), B, H, 2, cfg.heads);
    x = nn::gated_residual(g, x, nn::linear(g, a, name("ca.o")), gate(ada, 1), H);
    nn::check_finite(g, x, name("cross-attention"));

    h = modulated(ada, 2, x);
    h = nn::linear(g, nn::gelu(g, nn::linear(g, h, name("mlp.0"))), name("mlp.1"));
    x = nn::gated_residual(g, x, h, gate(ada, 2), H);
    nn::check_finite(g, x, name("mlp"));
  }
  const nn::Var fin = nn::linear(g, c, "final.ada");
  x = nn::modulate(g, nn::layernorm(g, x), nn::slice_cols(g, fin, 0, D), nn::slice_cols(g, fin, D, D), H);
  const nn::Var out = nn::linear(g, x, "final.out");
  nn::check_finite(g, out, "final projection");
  return out;
}

/// Per-column affine standardization.
struct Normalizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;

  static Normalizer identity(int dim) {
    return {Eigen::RowVectorXd::Zero(dim), Eigen::RowVectorXd::Ones(dim)};
  }

  /// Column statistics of `rows`, with the deviation floored at `floor`.
  static Normalizer fit(const RowMatrix& rows, double floor = 1e-2) {
    if (rows.rows() == 0) throw InputError("Normalizer::fit: no rows");
    Normalizer n;
    n.mean = rows.colwise().mean();
    n.std = ((rows.rowwise() - n.mean).array().square().colwise().sum() / static_cast<double>(rows.rows()))
                .sqrt()
                .max(floor)
                .matrix();
    return n;
  }

  RowMatrix apply(const RowMatrix& v) const {
    if (v.cols() != mean.size()) throw InputError("Normalizer: width mismatch");
    return (v.rowwise() - mean).array().rowwise() / std.array();
  }
  RowMatrix invert(const RowMatrix& v) const {
    if (v.cols() != mean.size()) throw InputError("Normalizer: width mismatch");
    return (v.array().rowwise() * std.array()).matrix().rowwise() + mean;
  }

  io::json to_json() const {
    return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
            {"std", std::vector<double>(std.data(), std.data() + std.size())}};
  }
  static Normalizer from_json(const io::json& j) {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto s = j.at("std").get<std::vector<double>>();
    if (m.size() != s.size()) throw IntegrityError("normalizer: mean and std lengths differ");
    Normalizer n;
    n.mean = Eigen::Map<const Eigen::RowVectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    n.std = Eigen::Map<const Eigen::RowVectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    return n;
  }
};

struct PolicyNormalization {
  Normalizer keypoints = Normalizer::identity(kKeypointDim);
  Normalizer states = Normalizer::identity(kJointDim);
  Normalizer actions = Normalizer::identity(kJointDim);

  io::json to_json() const {
    return {{"keypoints", keypoints.to_json()}, {"states", states.to_json()}, {"actions", actions.to_json()}};
  }
  static PolicyNormalization from_json(const io::json& j) {
    return {Normalizer::from_json(j.at("keypoints")), Normalizer::from_json(j.at("states")),
            Normalizer::from_json(j.at("actions"))};
  }
};

struct PolicyWeights {
  PolicyConfig config;
  nn::ParamStore<float> params;
  PolicyNormalization norm;
  std::vector<double> loss_curve;
  io::json meta = io::json::object();

  static PolicyWeights initial(const PolicyConfig& cfg) {
    return PolicyWeights{cfg, init_policy_params<float>(cfg, cfg.seed), {}, {}, io::json::object()};
  }

  std::string hash() const {
    return hex64(Fnv1a().update(config.hash()).update(params.content_hash()).update(norm.to_json().dump()).digest());
  }
};

struct ObservationEmbedding {
  Eigen::RowVectorXd z_x;
  Eigen::RowVectorXd z_s;
  RowMatrix z_obs;  // row 0 = z_x, row 1 = z_s
};

inline nn::Matrix<float> to_float(const RowMatrix& m) { return m.cast<float>(); }

/// Observation tokens for keypoints x_t (10 x 3) and joint state s_t.
inline ObservationEmbedding embed_observation(const PointCloud& x_t, const JointVector& s_t, const PolicyWeights& w) {
  if (x_t.rows() != kNumKeypoints || x_t.cols() != 3) throw InputError("embed_observation: expected 10 keypoints");
  RowMatrix x(1, kKeypointDim);
  for (int k = 0; k < kNumKeypoints; ++k) x.block<1, 3>(0, 3 * k) = x_t.row(k);
  const RowMatrix s = s_t.transpose();
  nn::Graph<float> g(w.params);
  const nn::Var z = embed_observation_node(g, g.constant(to_float(w.norm.keypoints.apply(x))),
                                           g.constant(to_float(w.norm.states.apply(s))));
  ObservationEmbedding e;
  e.z_obs = g.value(z).cast<double>();
  e.z_x = e.z_obs.row(0);
  e.z_s = e.z_obs.row(1);
  return e;
}

/// Predicted noise for one standardized noised chunk (H x 26).
inline RowMatrix predict_noise(const RowMatrix& noised, int k, const RowMatrix& z_obs, const PolicyWeights& w) {
  if (z_obs.rows() != 2) throw InputError("predict_noise: z_obs must have two rows");
  nn::Graph<float> g(w.params);
  const nn::Var out = predict_noise_node(g, w.config, g.constant(to_float(noised)), {k}, g.constant(to_float(z_obs)));
  return g.value(out).cast<double>();
}

inline void save_policy(const std::filesystem::path& dir, const PolicyWeights& w) {
  std::filesystem::create_directories(dir);
  io::json manifest{{"kind", "policy-checkpoint"},
                    {"format_version", 1},
                    {"config", w.config.to_json()},
                    {"config_hash", w.config.hash()},
                    {"weights_hash", w.hash()},
                    {"normalization", w.norm.to_json()},
                    {"loss_curve", w.loss_curve},
                    {"epoch", w.loss_curve.size()},
                    {"meta", w.meta}};
  manifest["params"] = w.params.save(dir);
  io::write_json(dir / "manifest.json", manifest);
}

inline PolicyWeights load_policy(const std::filesystem::path& dir) {
  const auto manifest = io::read_json(dir / "manifest.json");
  if (manifest.value("kind", "") != "policy-checkpoint") throw IntegrityError("not a policy checkpoint: " + dir.string());
  PolicyWeights w;
  w.config = PolicyConfig::from_json(manifest.at("config"));
  if (w.config.hash() != manifest.at("config_hash").get<std::string>()) {
    throw IntegrityError("policy checkpoint config hash mismatch");
  }
  w.params = init_policy_params<float>(w.config, 0);
  w.params.load(dir, manifest.at("params"));
  w.norm = PolicyNormalization::from_json(manifest.at("normalization"));
  w.loss_curve = manifest.at("loss_curve").get<std::vector<double>>();
  w.meta = manifest.value("meta", io::json::object());
  if (!w.params.all_finite()) throw IntegrityError("policy checkpoint holds non-finite values");
  if (w.hash() != manifest.at("weights_hash").get<std::string>()) {
    throw IntegrityError("policy checkpoint weights hash mismatch");
  }
  return w;
}

}  // namespace bagknot::policy
