#pragma once

#include "bagknot/corrdata/dataset.hpp"
#include "bagknot/encoder/infonce.hpp"
#include "bagknot/encoder/model.hpp"
#include "bagknot/nn/optim.hpp"

#include <functional>
#include <numeric>
#include <variant>
#include <vector>

namespace bagknot::encoder {

/// Appends the keypoints to the cloud so they are exact evaluation sites.
inline PointCloud with_keypoints(const PointCloud& cloud, const PointCloud& keypoints) {
  PointCloud out(cloud.rows() + keypoints.rows(), 3);
  out << cloud, keypoints;
  return out;
}

/// Plan for an augmented frame plus the sorted position of every input row.
struct PreparedFrame {
  EncoderPlan plan;
  std::vector<int> position;  // input row -> sorted row
  int cloud_rows = 0;
};

inline PreparedFrame prepare_frame(const PointCloud& cloud, const PointCloud& keypoints, const EncoderConfig& cfg) {
  PreparedFrame f;
  f.plan = make_plan(with_keypoints(cloud, keypoints), cfg);
  f.position.resize(f.plan.order.size());
  for (std::size_t i = 0; i < f.plan.order.size(); ++i) f.position[static_cast<std::size_t>(f.plan.order[i])] = static_cast<int>(i);
  f.cloud_rows = static_cast<int>(cloud.rows());
  return f;
}

/// Uniform draw of `m` cloud rows farther than r_excl from `centre`
/// (canonical units); with replacement only when too few are eligible.
inline std::vector<int> sample_negatives(const PreparedFrame& f, const Vec3& centre, int m, double r_excl, Rng& rng) {
  std::vector<int> eligible;
  eligible.reserve(static_cast<std::size_t>(f.cloud_rows));
  const auto& pts = f.plan.canonical.points;
  const double r2 = r_excl * r_excl;
  for (int i = 0; i < f.cloud_rows; ++i)
    if ((pts.row(i).transpose() - centre).squaredNorm() > r2) eligible.push_back(i);
  if (eligible.empty()) throw InputError("sample_negatives: no cloud point outside the exclusion radius");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(m));
  if (eligible.size() >= static_cast<std::size_t>(m)) {
    for (int j = 0; j < m; ++j) {
      const auto pick = j + static_cast<std::size_t>(rng() % (eligible.size() - static_cast<std::size_t>(j)));
      std::swap(eligible[static_cast<std::size_t>(j)], eligible[pick]);
      out.push_back(eligible[static_cast<std::size_t>(j)]);
    }
  } else {
    for (int j = 0; j < m; ++j) out.push_back(eligible[static_cast<std::size_t>(rng() % eligible.size())]);
  }
  return out;
}

struct TrainCallbacks {
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

/// Contrastive training over the dataset's pairs; deterministic per seed.
inline EncoderWeights train_encoder(const corrdata::CorrespondenceDataset& ds, const EncoderConfig& cfg,
                                    const TrainCallbacks& callbacks = {}) {
  cfg.validate();
  if (ds.pairs.empty()) throw InputError("train_encoder: empty pair set");
  EncoderWeights w = EncoderWeights::initial(cfg);
  std::vector<PreparedFrame> frames;
  frames.reserve(ds.frames.size());
  for (const auto& f : ds.frames) frames.push_back(prepare_frame(f.cloud, f.keypoints, cfg));

  std::variant<nn::Sgd<float>, nn::Adam<float>> opt =
      cfg.optimizer == "adam"
          ? std::variant<nn::Sgd<float>, nn::Adam<float>>(std::in_place_index<1>, w.params, cfg.lr)
          : std::variant<nn::Sgd<float>, nn::Adam<float>>(std::in_place_index<0>, w.params, cfg.lr, cfg.momentum);

  std::vector<std::size_t> order(ds.pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, {0x7EA1, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      w.params.zero_grad();
      nn::Graph<float> g(&w.params);
      std::vector<nn::Var> losses;
      for (std::size_t s = start; s < stop; ++s) {
        const auto& pair = ds.pairs[order[s]];
        const auto& fa = frames[static_cast<std::size_t>(pair.a)];
        const auto& fb = frames[static_cast<std::size_t>(pair.b)];
        const nn::Var va = encoder_forward(g, fa.plan, cfg);
        const nn::Var vb = encoder_forward(g, fb.plan, cfg);
        std::vector<int> anchors, positives, negatives;
        for (int id : pair.matched_ids) {
          const int row_a = fa.cloud_rows + id;
          const int row_b = fb.cloud_rows + id;
          anchors.push_back(fa.position[static_cast<std::size_t>(row_a)]);
          positives.push_back(fb.position[static_cast<std::size_t>(row_b)]);
          const Vec3 centre = fb.plan.canonical.points.row(row_b).transpose();
          for (int r : sample_negatives(fb, centre, cfg.m, cfg.r_excl, rng))
            negatives.push_back(fb.position[static_cast<std::size_t>(r)]);
        }
        losses.push_back(infonce_node(g, va, vb, std::move(anchors), std::move(positives), std::move(negatives),
                                      cfg.m, static_cast<float>(cfg.tau)));
      }
      nn::Var total = losses.front();
      for (std::size_t i = 1; i < losses.size(); ++i) total = nn::add(g, total, losses[i]);
      total = nn::scale(g, total, 1.0f / static_cast<float>(losses.size()));
      const double value = g.value(total)(0, 0);
      if (!std::isfinite(value)) {
        throw NumericError("train_encoder: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batches + 1));
      }
      g.backward(total);
      std::visit([](auto& o) { o.step(); }, opt);
      epoch_loss += value;
      ++batches;
    }
    w.loss_curve.push_back(epoch_loss / batches);
    if (callbacks.on_epoch) callbacks.on_epoch(epoch + 1, w.loss_curve.back());
  }
  if (!w.params.all_finite()) throw NumericError("train_encoder: parameters diverged");
  w.meta = {{"pairs", ds.pairs.size()}, {"frames", ds.frames.size()}, {"dataset_seed", ds.seed}};
  return w;
}

}  // namespace bagknot::encoder
