#pragma once

// Point-set kernels used by the hierarchical encoder: canonicalization,
// farthest-point sampling, ball grouping and 3-NN interpolation weights.

#include "bagknot/core/error.hpp"
#include "bagknot/core/random.hpp"
#include "bagknot/core/types.hpp"

#include <algorithm>
#include <cmath>
#include <array>
#include <limits>
#include <numeric>
#include <vector>

namespace bagknot::encoder {

/// canonical = (p - center) / scale.
struct CanonicalTransform {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;

  PointCloud apply(const PointCloud& c) const {
    return ((c.rowwise() - center.transpose()) / scale).eval();
  }
  PointCloud invert(const PointCloud& c) const {
    return ((c * scale).rowwise() + center.transpose()).eval();
  }
};

struct CanonicalCloud {
  PointCloud points;
  CanonicalTransform transform;
};

/// Centers at the centroid and scales the farthest point to radius 1.
inline CanonicalCloud canonicalize_cloud(const PointCloud& cloud) {
  if (cloud.rows() < 1) throw InputError("canonicalize_cloud: empty cloud");
  if (!cloud.allFinite()) throw InputError("canonicalize_cloud: non-finite coordinates");
  CanonicalCloud out;
  out.transform.center = cloud.colwise().mean().transpose();
  double max_r2 = 0.0;
  for (Eigen::Index i = 0; i < cloud.rows(); ++i)
    max_r2 = std::max(max_r2, (cloud.row(i).transpose() - out.transform.center).squaredNorm());
  const double r = std::sqrt(max_r2);
  if (!(r > 1e-12)) throw InputError("canonicalize_cloud: degenerate cloud (all points coincide)");
  out.transform.scale = r;
  out.points = out.transform.apply(cloud);
  return out;
}

/// Indices of `points` in lexicographic (x, y, z) order, ties by index.
inline std::vector<int> lexicographic_order(const PointCloud& points) {
  std::vector<int> order(static_cast<std::size_t>(points.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    for (int k = 0; k < 3; ++k) {
      if (points(a, k) < points(b, k)) return true;
      if (points(a, k) > points(b, k)) return false;
    }
    return false;
  });
  return order;
}

/// Processing order of the encoder: a pseudorandom permutation keyed by the
/// coordinates quantized to 1e-6, ties broken lexicographically. It depends
/// on geometry only, and index-truncated neighbourhoods drawn in this order
/// are spatially unbiased (a lexicographic order would keep one side of
/// every ball).
inline std::vector<int> geometric_order(const PointCloud& points) {
  const auto n = static_cast<std::size_t>(points.rows());
  std::vector<std::uint64_t> key(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<std::uint64_t, 3> q{};
    for (int k = 0; k < 3; ++k)
      q[static_cast<std::size_t>(k)] =
          static_cast<std::uint64_t>(std::llround(points(static_cast<Eigen::Index>(i), k) * 1e6));
    key[i] = derive_seed(0x6E0, {q[0], q[1], q[2]});
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (key[static_cast<std::size_t>(a)] != key[static_cast<std::size_t>(b)])
      return key[static_cast<std::size_t>(a)] < key[static_cast<std::size_t>(b)];
    for (int k = 0; k < 3; ++k) {
      if (points(a, k) < points(b, k)) return true;
      if (points(a, k) > points(b, k)) return false;
    }
    return false;
  });
  return order;
}

/// Greedy max-min selection starting at the lexicographically smallest
/// point; ties go to the lowest index.
inline std::vector<int> farthest_point_sample(const PointCloud& points, int k) {
  const auto n = static_cast<int>(points.rows());
  if (k > n) throw InputError("farthest_point_sample: k exceeds point count");
  std::vector<int> picked;
  if (k <= 0) return picked;
  picked.reserve(static_cast<std::size_t>(k));
  picked.push_back(lexicographic_order(points).front());
  std::vector<double> dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (int s = 1; s < k; ++s) {
    const auto last = points.row(picked.back());
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      auto& d = dist[static_cast<std::size_t>(i)];
      d = std::min(d, (points.row(i) - last).squaredNorm());
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    picked.push_back(best);
  }
  return picked;
}

/// For each centroid (an index into `points`), the K lowest indices within
/// `radius`, padded with the nearest member; flattened row-major (M x K).
inline std::vector<int> ball_query(const PointCloud& points, const std::vector<int>& centroids,
                                   double radius, int K) {
  if (!(radius > 0.0) || K < 1) throw InputError("ball_query: radius and K must be positive");
  const double r2 = radius * radius;
  std::vector<int> out;
  out.reserve(centroids.size() * static_cast<std::size_t>(K));
  for (int c : centroids) {
    const auto centre = points.row(c);
    const std::size_t begin = out.size();
    int nearest = -1;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < points.rows() && out.size() - begin < static_cast<std::size_t>(K); ++i) {
      const double d = (points.row(i) - centre).squaredNorm();
      if (d <= r2) {
        out.push_back(static_cast<int>(i));
        if (d < nearest_d) {
          nearest_d = d;
          nearest = static_cast<int>(i);
        }
      }
    }
    if (nearest < 0) nearest = c;
    while (out.size() - begin < static_cast<std::size_t>(K)) out.push_back(nearest);
  }
  return out;
}

/// Up to three nearest `coarse` points per `fine` point, with normalized
/// inverse-distance weights. Ties go to the lowest coarse index.
struct Interpolation {
  std::vector<int> index;
  std::vector<double> weight;
  int per_row = 0;
};

inline Interpolation three_nn(const PointCloud& fine, const PointCloud& coarse) {
  if (coarse.rows() < 1) throw InputError("three_nn: empty coarse set");
  Interpolation out;
  out.per_row = static_cast<int>(std::min<Eigen::Index>(3, coarse.rows()));
  const auto k = static_cast<std::size_t>(out.per_row);
  out.index.reserve(static_cast<std::size_t>(fine.rows()) * k);
  out.weight.reserve(out.index.capacity());
  for (Eigen::Index i = 0; i < fine.rows(); ++i) {
    std::array<double, 3> bd{std::numeric_limits<double>::infinity(),
                             std::numeric_limits<double>::infinity(),
                             std::numeric_limits<double>::infinity()};
    std::array<int, 3> bi{-1, -1, -1};
    for (Eigen::Index j = 0; j < coarse.rows(); ++j) {
      const double d = (fine.row(i) - coarse.row(j)).squaredNorm();
      if (d < bd[k - 1]) {
        std::size_t p = k - 1;
        while (p > 0 && d < bd[p - 1]) {
          bd[p] = bd[p - 1];
          bi[p] = bi[p - 1];
          --p;
        }
        bd[p] = d;
        bi[p] = static_cast<int>(j);
      }
    }
    double total = 0.0;
    std::array<double, 3> w{};
    for (std::size_t p = 0; p < k; ++p) {
      w[p] = 1.0 / (std::sqrt(bd[p]) + 1e-8);
      total += w[p];
    }
    for (std::size_t p = 0; p < k; ++p) {
      out.index.push_back(bi[p]);
      out.weight.push_back(w[p] / total);
    }
  }
  return out;
}

}  // namespace bagknot::encoder
