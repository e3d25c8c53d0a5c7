#pragma once

// Behaviour cloning of the noise predictor on (keypoints, state, chunk)
// tuples cut from demonstrations.

#include "bagknot/bagsim/expert.hpp"
#include "bagknot/nn/optim.hpp"
#include "bagknot/policy/sample.hpp"

#include <functional>
#include <numeric>
#include <span>

namespace bagknot::policy {

/// The H actions starting at step t; steps past the end repeat the last action.
inline RowMatrix action_chunk(const RowMatrix& actions, int t, int H) {
  if (actions.rows() == 0) throw InputError("action_chunk: empty action sequence");
  if (t < 0 || t >= actions.rows()) throw InputError("action_chunk: start step out of range");
  RowMatrix chunk(H, actions.cols());
  const auto last = actions.rows() - 1;
  for (int h = 0; h < H; ++h) chunk.row(h) = actions.row(std::min<Eigen::Index>(t + h, last));
  return chunk;
}

inline void check_demo(const bagsim::Demonstration& d) {
  const auto T = d.actions.rows();
  if (T == 0 || d.states.rows() != T || d.observed_keypoints.rows() != T) {
    throw InputError("demonstration arrays must share a non-zero length");
  }
  if (d.actions.cols() != kJointDim || d.states.cols() != kJointDim || d.observed_keypoints.cols() != kKeypointDim) {
    throw InputError("demonstration arrays have unexpected widths");
  }
}

/// Standardization fitted on every step of every demonstration.
inline PolicyNormalization fit_normalization(std::span<const bagsim::Demonstration> demos) {
  if (demos.empty()) throw InputError("fit_normalization: no demonstrations");
  Eigen::Index rows = 0;
  for (const auto& d : demos) {
    check_demo(d);
    rows += d.actions.rows();
  }
  RowMatrix x(rows, kKeypointDim), s(rows, kJointDim), a(rows, kJointDim);
  Eigen::Index r = 0;
  for (const auto& d : demos) {
    const auto T = d.actions.rows();
    x.middleRows(r, T) = d.observed_keypoints;
    s.middleRows(r, T) = d.states;
    a.middleRows(r, T) = d.actions;
    r += T;
  }
  return {Normalizer::fit(x), Normalizer::fit(s), Normalizer::fit(a)};
}

/// A minibatch of noised training tuples in standardized units.
template <class T>
struct DiffusionBatch {
  nn::Matrix<T> x;       // B x 30
  nn::Matrix<T> s;       // B x 26
  nn::Matrix<T> noised;  // B*H x 26
  nn::Matrix<T> eps;     // B*H x 26
  std::vector<int> steps;
};

/// Mean squared error between predicted and true noise.
template <class T>
nn::Var diffusion_loss_node(nn::Graph<T>& g, const PolicyConfig& cfg, const DiffusionBatch<T>& b) {
  const nn::Var z = embed_observation_node(g, g.constant(b.x), g.constant(b.s));
  const nn::Var eps_hat = predict_noise_node(g, cfg, g.constant(b.noised), b.steps, z);
  return nn::mse(g, eps_hat, b.eps);
}

struct TrainingTuple {
  int demo = 0;
  int t = 0;
};

/// Standardized demonstration arrays, indexed by step.
struct PreparedDemos {
  std::vector<RowMatrix> x, s, a;
  std::vector<TrainingTuple> tuples;
};

inline PreparedDemos prepare_demos(std::span<const bagsim::Demonstration> demos, const PolicyNormalization& norm) {
  PreparedDemos p;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const auto& d = demos[i];
    check_demo(d);
    p.x.push_back(norm.keypoints.apply(d.observed_keypoints));
    p.s.push_back(norm.states.apply(d.states));
    p.a.push_back(norm.actions.apply(d.actions));
    for (int t = 0; t < d.actions.rows(); ++t) p.tuples.push_back({static_cast<int>(i), t});
  }
  return p;
}

/// Draws k and eps for each listed tuple and assembles the batch.
template <class T>
DiffusionBatch<T> make_batch(const PreparedDemos& p, std::span<const std::size_t> picks, const PolicyConfig& cfg,
                             const DiffusionSchedule& s, Rng& rng) {
  const auto B = static_cast<Eigen::Index>(picks.size());
  const int H = cfg.H;
  DiffusionBatch<T> b;
  b.x.resize(B, kKeypointDim);
  b.s.resize(B, kJointDim);
  b.noised.resize(B * H, kJointDim);
  b.eps.resize(B * H, kJointDim);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto& tup = p.tuples[picks[static_cast<std::size_t>(i)]];
    const auto d = static_cast<std::size_t>(tup.demo);
    b.x.row(i) = p.x[d].row(tup.t).cast<T>();
    b.s.row(i) = p.s[d].row(tup.t).cast<T>();
    const int k = static_cast<int>(rng() % static_cast<std::uint64_t>(s.K));
    RowMatrix eps(H, kJointDim);
    for (Eigen::Index j = 0; j < eps.size(); ++j) eps.data()[j] = normal(rng);
    b.noised.middleRows(i * H, H) = add_noise(action_chunk(p.a[d], tup.t, H), k, eps, s).cast<T>();
    b.eps.middleRows(i * H, H) = eps.cast<T>();
    b.steps.push_back(k);
  }
  return b;
}

struct PolicyTrainCallbacks {
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

/// Adam on the noise-prediction loss; deterministic per seed. The returned
/// parameters are the exponential moving average when ema_decay > 0.
inline PolicyWeights train_policy(std::span<const bagsim::Demonstration> demos, const PolicyConfig& cfg,
                                  const PolicyTrainCallbacks& callbacks = {}) {
  cfg.validate();
  if (demos.empty()) throw InputError("train_policy: no demonstrations");
  PolicyWeights w = PolicyWeights::initial(cfg);
  w.norm = fit_normalization(demos);
  const auto prepared = prepare_demos(demos, w.norm);
  const auto schedule = schedule_for(cfg);
  nn::Adam<float> opt(w.params, cfg.lr);
  nn::ParamStore<float> ema = w.params;
  const auto per_epoch = (prepared.tuples.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                         static_cast<std::size_t>(cfg.batch_size);
  const double total_steps = static_cast<double>(per_epoch) * cfg.epochs;
  long step = 0;

  std::vector<std::size_t> order(prepared.tuples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, {0x7B0, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto batch = make_batch<float>(prepared, std::span(order).subspan(start, stop - start), cfg, schedule, rng);
      w.params.zero_grad();
      nn::Graph<float> g(&w.params);
      const nn::Var loss = diffusion_loss_node(g, cfg, batch);
      const double value = g.value(loss)(0, 0);
      if (!std::isfinite(value)) {
        throw NumericError("train_policy: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batches + 1));
      }
      g.backward(loss);
      nn::clip_grad_norm(w.params, cfg.grad_clip);
      if (cfg.cosine_lr) opt.set_lr(0.5 * cfg.lr * (1.0 + std::cos(kPi * static_cast<double>(step) / total_steps)));
      opt.step();
      ++step;
      if (cfg.ema_decay > 0.0) {
        const auto d = static_cast<float>(std::min(cfg.ema_decay, (1.0 + step) / (10.0 + step)));
        for (std::size_t i = 0; i < ema.size(); ++i) {
          auto& e = ema.value(static_cast<int>(i));
          e = d * e + (1.0f - d) * w.params.value(static_cast<int>(i));
        }
      }
      epoch_loss += value;
      ++batches;
    }
    w.loss_curve.push_back(epoch_loss / batches);
    if (callbacks.on_epoch) callbacks.on_epoch(epoch + 1, w.loss_curve.back());
  }
  if (cfg.ema_decay > 0.0)
    for (std::size_t i = 0; i < ema.size(); ++i) w.params.value(static_cast<int>(i)) = ema.value(static_cast<int>(i));
  if (!w.params.all_finite()) throw NumericError("train_policy: parameters diverged");
  w.meta = {{"demos", demos.size()}, {"tuples", prepared.tuples.size()}};
  return w;
}

}  // namespace bagknot::policy
