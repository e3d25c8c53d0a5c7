#pragma once

// DDPM ancestral sampling of action chunks.

#include "bagknot/bagsim/expert.hpp"
#include "bagknot/policy/model.hpp"

namespace bagknot::policy {

struct ActionChunk {
  RowMatrix actions;  // H x 26, radians
  int start_step = 0;
};

/// Runs the reverse chain from pure noise. `denoiser(x, k)` returns the
/// predicted noise for the current sample x at step k.
template <class Denoiser>
RowMatrix ddpm_sample(Eigen::Index rows, Eigen::Index cols, const DiffusionSchedule& s, std::uint64_t seed,
                      Denoiser&& denoiser) {
  Rng rng = make_rng(seed, {0x5A3D});
  RowMatrix x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  for (int k = s.K - 1; k >= 0; --k) {
    const auto ku = static_cast<std::size_t>(k);
    const RowMatrix eps = denoiser(x, k);
    const double beta = s.betas[ku];
    x = (x - (beta / s.sigma[ku]) * eps) / std::sqrt(1.0 - beta);
    if (k > 0) {
      const double var = beta * (1.0 - s.alpha_bar[ku - 1]) / (1.0 - s.alpha_bar[ku]);
      const double sd = std::sqrt(var);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += sd * normal(rng);
    }
    if (!x.allFinite()) throw NumericError("sampling diverged at diffusion step " + std::to_string(k));
  }
  return x;
}

inline void require_compatible(const PolicyWeights& w, const DiffusionSchedule& s) {
  if (s.K != w.config.K) throw ConfigError("schedule length differs from the policy configuration");
}

/// Chunk in standardized action units (no clipping).
inline RowMatrix sample_standardized(const RowMatrix& z_obs, const PolicyWeights& w, const DiffusionSchedule& s,
                                     std::uint64_t seed) {
  require_compatible(w, s);
  return ddpm_sample(w.config.H, kJointDim, s, seed,
                     [&](const RowMatrix& x, int k) { return predict_noise(x, k, z_obs, w); });
}

inline ActionChunk sample_chunk(const RowMatrix& z_obs, const PolicyWeights& w, const DiffusionSchedule& s,
                                std::uint64_t seed, int start_step = 0) {
  ActionChunk chunk;
  chunk.actions = w.norm.actions.invert(sample_standardized(z_obs, w, s, seed))
                      .cwiseMax(-bagsim::kJointLimit)
                      .cwiseMin(bagsim::kJointLimit);
  chunk.start_step = start_step;
  return chunk;
}

inline DiffusionSchedule schedule_for(const PolicyConfig& cfg) {
  return make_schedule(cfg.K, cfg.beta_min, cfg.beta_max);
}

}  // namespace bagknot::policy
