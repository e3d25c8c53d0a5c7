#pragma once

// Keypoint identification by feature argmax against a frozen reference, a
// nearest-neighbour scene-flow tracker, and the per-frame re-identification
// mode used by the ablation.

#include "bagknot/bagsim/surface.hpp"
#include "bagknot/encoder/model.hpp"
#include "bagknot/encoder/train.hpp"

#include <array>
#include <limits>
#include <string>
#include <vector>

namespace bagknot::matcher {

using encoder::EncoderWeights;

/// The frozen canonical observation with its keypoint features.
struct ReferenceSet {
  PointCloud cloud;      // reference cloud with the keypoints appended
  PointCloud keypoints;  // 10 x 3
  RowMatrix features;    // 10 x d, unit rows
  std::string encoder_hash;
  int template_id = 0;
};

inline ReferenceSet make_reference(const PointCloud& cloud, const PointCloud& keypoints, const EncoderWeights& w,
                                   int template_id = 0) {
  if (keypoints.rows() != kNumKeypoints) throw InputError("make_reference: expected 10 keypoints");
  ReferenceSet ref;
  ref.cloud = encoder::with_keypoints(cloud, keypoints);
  ref.keypoints = keypoints;
  const auto field = encoder::encode(ref.cloud, w);
  ref.features = field.features.bottomRows(kNumKeypoints);
  ref.encoder_hash = w.hash();
  ref.template_id = template_id;
  return ref;
}

inline ReferenceSet make_reference(const bagsim::Frame& frame, const EncoderWeights& w) {
  return make_reference(frame.cloud, frame.keypoints, w, frame.template_id);
}

/// Sequential dot product; every argmax in the matcher uses this order.
inline double dot_sequential(const double* a, const double* b, Eigen::Index d) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) s += a[k] * b[k];
  return s;
}

struct Identification {
  PointCloud keypoints;                  // 10 x 3, chosen cloud points
  std::array<int, kNumKeypoints> index{};  // chosen row per keypoint
  std::array<double, kNumKeypoints> similarity{};
  bool has_duplicates() const {
    for (int i = 0; i < kNumKeypoints; ++i)
      for (int j = i + 1; j < kNumKeypoints; ++j)
        if (index[static_cast<std::size_t>(i)] == index[static_cast<std::size_t>(j)]) return true;
    return false;
  }
};

/// Argmax over precomputed features; ties go to the lowest row.
inline Identification identify_from_features(const PointCloud& cloud, const RowMatrix& features,
                                             const ReferenceSet& ref) {
  if (features.rows() != cloud.rows() || features.cols() != ref.features.cols()) {
    throw InputError("identify: feature field does not match the cloud or reference");
  }
  Identification out;
  out.keypoints.resize(kNumKeypoints, 3);
  const auto d = features.cols();
  for (int k = 0; k < kNumKeypoints; ++k) {
    const double* r = ref.features.row(k).data();
    int best = 0;
    double best_s = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < features.rows(); ++j) {
      const double s = dot_sequential(features.row(j).data(), r, d);
      if (s > best_s) {
        best_s = s;
        best = static_cast<int>(j);
      }
    }
    out.index[static_cast<std::size_t>(k)] = best;
    out.similarity[static_cast<std::size_t>(k)] = best_s;
    out.keypoints.row(k) = cloud.row(best);
  }
  return out;
}

/// Keypoints on `cloud` by feature matching against `ref`.
inline Identification identify_keypoints(const PointCloud& cloud, const ReferenceSet& ref, const EncoderWeights& w) {
  if (cloud.rows() < 1) throw InputError("identify_keypoints: empty cloud");
  if (ref.encoder_hash != w.hash()) throw ConfigError("identify_keypoints: reference built with a different encoder");
  bool degenerate = true;
  for (Eigen::Index i = 1; i < cloud.rows() && degenerate; ++i) degenerate = cloud.row(i) == cloud.row(0);
  if (degenerate) {
    // every candidate is the same point; the lowest index wins the argmax
    Identification out;
    out.keypoints = cloud.row(0).replicate(kNumKeypoints, 1);
    out.index.fill(0);
    out.similarity.fill(std::numeric_limits<double>::quiet_NaN());
    return out;
  }
  return identify_from_features(cloud, encoder::encode(cloud, w).features, ref);
}

/// First `n` points of a frame. The sampler draws points sequentially, so a
/// prefix is itself a uniform sample of the surface at lower density.
inline PointCloud cloud_prefix(const PointCloud& cloud, Eigen::Index n) {
  return cloud.topRows(std::min(n, cloud.rows()));
}

enum class Mode { Track, Reidentify };

inline std::string to_string(Mode m) { return m == Mode::Track ? "track" : "reidentify"; }
inline Mode parse_mode(const std::string& s) {
  if (s == "track") return Mode::Track;
  if (s == "reidentify") return Mode::Reidentify;
  throw InputError("unknown matcher mode '" + s + "'");
}

struct TrackState {
  PointCloud keypoints;  // 10 x 3
  std::array<int, kNumKeypoints> keypoint_ids{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  int last_frame_index = 0;
  Mode mode = Mode::Track;
};

inline constexpr int kFlowNeighbors = 16;

namespace detail {
inline int nearest(const PointCloud& cloud, const Eigen::RowVector3d& p) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    const double d = (cloud.row(i) - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

/// Indices of the k nearest rows, ties by lower index.
inline std::vector<int> k_nearest(const PointCloud& cloud, const Eigen::RowVector3d& p, int k) {
  std::vector<std::pair<double, int>> d(static_cast<std::size_t>(cloud.rows()));
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) d[static_cast<std::size_t>(i)] = {(cloud.row(i) - p).squaredNorm(), static_cast<int>(i)};
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), d.end());
  std::vector<int> out;
  for (std::size_t i = 0; i < kk; ++i) out.push_back(d[i].second);
  return out;
}
}  // namespace detail

/// Moves each keypoint by the mean nearest-neighbour flow of its 16 nearest
/// previous-frame points, then snaps it to the next cloud.
inline TrackState track_step(const TrackState& state, const PointCloud& prev_cloud, const PointCloud& next_cloud) {
  if (next_cloud.rows() < 1) throw InputError("track_step: empty next frame");
  if (prev_cloud.rows() < 1) throw InputError("track_step: empty previous frame");
  if (state.mode != Mode::Track) throw InputError("track_step: state is in reidentify mode");
  TrackState out = state;
  for (int k = 0; k < kNumKeypoints; ++k) {
    const Eigen::RowVector3d x = state.keypoints.row(k);
    Eigen::RowVector3d flow = Eigen::RowVector3d::Zero();
    const auto nbrs = detail::k_nearest(prev_cloud, x, kFlowNeighbors);
    for (int i : nbrs) {
      const Eigen::RowVector3d p = prev_cloud.row(i);
      flow += next_cloud.row(detail::nearest(next_cloud, p)) - p;
    }
    flow /= static_cast<double>(nbrs.size());
    out.keypoints.row(k) = next_cloud.row(detail::nearest(next_cloud, x + flow));
  }
  ++out.last_frame_index;
  return out;
}

inline TrackState reidentify_step(const TrackState& state, const PointCloud& next_cloud, const ReferenceSet& ref,
                                  const EncoderWeights& w) {
  if (state.mode != Mode::Reidentify) throw InputError("reidentify_step: state is in track mode");
  TrackState out = state;
  out.keypoints = identify_keypoints(next_cloud, ref, w).keypoints;
  ++out.last_frame_index;
  return out;
}

/// Fraction of keypoints identified within `threshold` canonical units of
/// the ground truth; the unit is the frame's own canonical scale.
struct AccuracyReport {
  int hits = 0;
  int total = 0;
  double mean_error = 0.0;
  double rate() const { return total == 0 ? 0.0 : static_cast<double>(hits) / total; }
};

inline AccuracyReport identification_accuracy(const std::vector<std::pair<PointCloud, PointCloud>>& frames,
                                              const ReferenceSet& ref, const EncoderWeights& w,
                                              double threshold = 0.1) {
  AccuracyReport rep;
  double err_sum = 0.0;
  for (const auto& [cloud, truth] : frames) {
    const double scale = encoder::canonicalize_cloud(cloud).transform.scale;
    const auto id = identify_keypoints(cloud, ref, w);
    for (int k = 0; k < kNumKeypoints; ++k) {
      const double e = (id.keypoints.row(k) - truth.row(k)).norm() / scale;
      err_sum += e;
      rep.hits += e <= threshold;
      ++rep.total;
    }
  }
  rep.mean_error = rep.total == 0 ? 0.0 : err_sum / rep.total;
  return rep;
}

}  // namespace bagknot::matcher
