#pragma once

// DDPM noise schedule with linear betas.

#include "bagknot/core/error.hpp"
#include "bagknot/core/types.hpp"

#include <cmath>
#include <vector>

namespace bagknot::policy {

struct DiffusionSchedule {
  int K = 0;
  std::vector<double> betas;
  std::vector<double> alpha_bar;  // cumulative products of (1 - beta)
  std::vector<double> alpha;      // sqrt(alpha_bar)
  std::vector<double> sigma;      // sqrt(1 - alpha_bar)
};

inline DiffusionSchedule make_schedule(int K, double beta_min, double beta_max) {
  if (K < 1) throw ConfigError("make_schedule: K must be at least 1");
  const bool ordered = K == 1 ? beta_min <= beta_max : beta_min < beta_max;
  if (!(beta_min > 0.0 && beta_max < 1.0 && ordered)) {
    throw ConfigError("make_schedule: need 0 < beta_min < beta_max < 1");
  }
  DiffusionSchedule s;
  s.K = K;
  double prod = 1.0;
  for (int k = 0; k < K; ++k) {
    const double beta = K == 1 ? beta_min : beta_min + (beta_max - beta_min) * k / (K - 1);
    prod *= 1.0 - beta;
    s.betas.push_back(beta);
    s.alpha_bar.push_back(prod);
    s.alpha.push_back(std::sqrt(prod));
    s.sigma.push_back(std::sqrt(1.0 - prod));
  }
  return s;
}

inline void require_step(const DiffusionSchedule& s, int k) {
  if (k < 0 || k >= s.K) throw InputError("diffusion step " + std::to_string(k) + " outside [0, K)");
}

/// alpha_k * A + sigma_k * eps.
inline RowMatrix add_noise(const RowMatrix& A, int k, const RowMatrix& eps, const DiffusionSchedule& s) {
  require_step(s, k);
  if (A.rows() != eps.rows() || A.cols() != eps.cols()) throw InputError("add_noise: noise shape differs from chunk");
  return s.alpha[static_cast<std::size_t>(k)] * A + s.sigma[static_cast<std::size_t>(k)] * eps;
}

/// One-step estimate of the clean chunk from a noise prediction.
inline RowMatrix predict_x0(const RowMatrix& noised, int k, const RowMatrix& eps_hat, const DiffusionSchedule& s) {
  require_step(s, k);
  if (noised.rows() != eps_hat.rows() || noised.cols() != eps_hat.cols()) {
    throw InputError("predict_x0: noise shape differs from chunk");
  }
  return (noised - s.sigma[static_cast<std::size_t>(k)] * eps_hat) / s.alpha[static_cast<std::size_t>(k)];
}

}  // namespace bagknot::policy
