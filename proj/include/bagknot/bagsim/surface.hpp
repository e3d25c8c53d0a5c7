#pragma once

// Deformation map and surface sampling for the procedural bag.
//
// Every surface point has fixed material coordinates (body: theta, phi;
// handle: t, psi). A DeformationParams value maps material coordinates to
// workspace positions; keypoints are the images of handle-centerline points,
// so ground-truth correspondence across frames is exact.

#include "bagknot/bagsim/bag_template.hpp"
#include "bagknot/bagsim/deformation.hpp"
#include "bagknot/core/error.hpp"
#include "bagknot/core/random.hpp"
#include "bagknot/core/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace bagknot::bagsim {

/// Evaluates the deformed surface of one template under one parameter set.
class SurfaceMap {
 public:
  SurfaceMap(const BagTemplate& tmpl, const DeformationParams& params)
      : tmpl_(tmpl), params_(params) {
    const double r = tmpl.handle_tube_radius;
    width_axis_ = r * (1.0 + 2.0 * (1.0 - params.compression) + 3.0 * params.flatten);
    thickness_axis_ = r * (1.0 - 0.5 * params.flatten);
    arc_height_scale_ = 1.0 - 0.4 * params.flatten;
  }

  /// Body shell: theta in [0, 2pi), phi in [-pi/2 (bottom), 0 (rim)].
  Vec3 body(double theta, double phi) const {
    const double e = tmpl_.body_exponent;
    auto signed_pow = [e](double v) { return std::copysign(std::pow(std::abs(v), 2.0 / e), v); };
    const double ring = std::pow(std::abs(std::cos(phi)), 2.0 / e);
    Vec3 p{tmpl_.half_width() * ring * signed_pow(std::cos(theta)),
           tmpl_.half_depth() * ring * signed_pow(std::sin(theta)),
           tmpl_.height() * (1.0 + signed_pow(std::sin(phi)))};
    return p + params_.warp_displacement(p);
  }

  /// Handle surface; `surface` = 0 gives the centerline, 1 the tube wall.
  Vec3 handle(int j, double t, double psi, double surface = 1.0) const {
    const double side = j == 0 ? -1.0 : 1.0;
    const double rho = tmpl_.handle_arc_radius + surface * thickness_axis_ * std::sin(psi);
    double xi = surface * width_axis_ * std::cos(psi);  // outward from the bag center
    const double eta = rho * std::cos(kPi * t);
    double zeta = arc_height_scale_ * rho * std::sin(kPi * t);
    // rotation about the chord through both attachment points
    const double angle = params_.orientation_angle - params_.twist_angle * t;
    const double c = std::cos(angle), s = std::sin(angle);
    const double xr = xi * c + zeta * s;
    const double zr = -xi * s + zeta * c;
    xi = xr;
    zeta = zr;
    Vec3 p{tmpl_.attach_offsets[static_cast<std::size_t>(j)] + side * xi + params_.incline_shear * zeta,
           eta, tmpl_.height() + zeta};
    return p + params_.warp_displacement(p);
  }

  Vec3 keypoint(int k) const {
    const auto slot = static_cast<std::size_t>(k % kKeypointsPerHandle);
    return handle(k / kKeypointsPerHandle, kKeypointFractions[slot], 0.0, 0.0);
  }

  PointCloud keypoints() const {
    PointCloud out(kNumKeypoints, 3);
    for (int k = 0; k < kNumKeypoints; ++k) out.row(k) = keypoint(k).transpose();
    return out;
  }

  double width_axis() const { return width_axis_; }
  double thickness_axis() const { return thickness_axis_; }

 private:
  const BagTemplate& tmpl_;
  const DeformationParams& params_;
  double width_axis_ = 0.0;
  double thickness_axis_ = 0.0;
  double arc_height_scale_ = 1.0;
};

inline PointCloud deformed_keypoints(const BagTemplate& tmpl, const DeformationParams& params) {
  return SurfaceMap(tmpl, params).keypoints();
}

/// Material-coordinate triangle mesh shared by every template.
struct SurfaceMesh {
  struct Vertex {
    int part;  // -1 body, 0/1 handle index
    double u;  // theta or t
    double v;  // phi or psi
  };
  std::vector<Vertex> vertices;
  std::vector<std::array<int, 3>> triangles;

  static const SurfaceMesh& instance() {
    static const SurfaceMesh mesh = build();
    return mesh;
  }

 private:
  static constexpr int kBodyAround = 56;
  static constexpr int kBodyRows = 14;
  static constexpr int kHandleAlong = 48;
  static constexpr int kHandleAround = 10;

  static SurfaceMesh build() {
    SurfaceMesh m;
    auto quad = [&m](int a, int b, int c, int d) {
      m.triangles.push_back({a, b, c});
      m.triangles.push_back({a, c, d});
    };
    // body: rows from the bottom pole to the rim, wrapping around theta
    for (int r = 0; r <= kBodyRows; ++r)
      for (int a = 0; a < kBodyAround; ++a)
        m.vertices.push_back({-1, 2.0 * kPi * a / kBodyAround,
                              -kPi / 2 + (kPi / 2) * r / kBodyRows});
    for (int r = 0; r < kBodyRows; ++r)
      for (int a = 0; a < kBodyAround; ++a) {
        const int a1 = (a + 1) % kBodyAround;
        quad(r * kBodyAround + a, r * kBodyAround + a1, (r + 1) * kBodyAround + a1,
             (r + 1) * kBodyAround + a);
      }
    for (int j = 0; j < kNumHandles; ++j) {
      const int base = static_cast<int>(m.vertices.size());
      for (int i = 0; i <= kHandleAlong; ++i)
        for (int a = 0; a < kHandleAround; ++a)
          m.vertices.push_back({j, static_cast<double>(i) / kHandleAlong,
                                2.0 * kPi * a / kHandleAround});
      for (int i = 0; i < kHandleAlong; ++i)
        for (int a = 0; a < kHandleAround; ++a) {
          const int a1 = (a + 1) % kHandleAround;
          quad(base + i * kHandleAround + a, base + i * kHandleAround + a1,
               base + (i + 1) * kHandleAround + a1, base + (i + 1) * kHandleAround + a);
        }
    }
    return m;
  }
};

inline std::vector<Vec3> mesh_positions(const SurfaceMap& map) {
  const auto& mesh = SurfaceMesh::instance();
  std::vector<Vec3> out;
  out.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices)
    out.push_back(v.part < 0 ? map.body(v.u, v.v) : map.handle(v.part, v.u, v.v));
  return out;
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

/// One observation of a bag: segmented surface samples plus exact keypoints.
struct Frame {
  PointCloud cloud;
  PointCloud keypoints;
  std::array<int, kNumKeypoints> keypoint_ids{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  DeformationParams deformation;
  std::uint64_t seed = 0;
  int template_id = 0;
};

/// Sampling limits for the rejection sampler.
inline constexpr double kMaxAreaStretch = 8.0;
inline constexpr double kMinAreaStretch = 0.01;

/// Samples `n_pc` points uniformly by area on the deformed surface.
///
/// Candidates are drawn uniformly on the undeformed template and accepted
/// with probability stretch / kMaxAreaStretch, which is exactly uniform on
/// the deformed surface. With a fixed seed, nearby parameter sets accept
/// nearly the same material points, so a sequence rendered with one seed
/// behaves like a video of a physical surface.
inline Frame render_frame(const BagTemplate& tmpl, const DeformationParams& params, int n_pc,
                          std::uint64_t seed) {
  if (n_pc < 64) throw InputError("render_frame: n_pc must be at least 64");
  if (!params.finite()) throw GenerationError("render_frame: non-finite deformation parameters");
  if (params.warp_bound() > kWarpBoundFraction * tmpl.height()) {
    throw GenerationError("render_frame: warp displacement exceeds 0.15 x body height");
  }
  const auto& mesh = SurfaceMesh::instance();
  const DeformationParams rest = identity_deformation();
  const auto rest_pos = mesh_positions(SurfaceMap(tmpl, rest));
  const auto def_pos = mesh_positions(SurfaceMap(tmpl, params));

  const std::size_t n_tri = mesh.triangles.size();
  std::vector<double> cdf(n_tri);
  std::vector<double> stretch(n_tri, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n_tri; ++i) {
    const auto& [a, b, c] = mesh.triangles[i];
    const double a0 = triangle_area(rest_pos[a], rest_pos[b], rest_pos[c]);
    if (a0 > 1e-12) {
      const double a1 = triangle_area(def_pos[a], def_pos[b], def_pos[c]);
      stretch[i] = a1 / a0;
      if (!std::isfinite(stretch[i]) || stretch[i] < kMinAreaStretch) {
        throw GenerationError("render_frame: surface self-collapse at triangle " +
                              std::to_string(i));
      }
      if (stretch[i] > kMaxAreaStretch) {
        throw GenerationError("render_frame: surface stretch beyond sampler bound at triangle " +
                              std::to_string(i));
      }
      total += a0;
    }
    cdf[i] = total;
  }

  Frame f;
  f.cloud.resize(n_pc, 3);
  f.deformation = params;
  f.seed = seed;
  f.template_id = tmpl.template_id;
  auto rng = make_rng(seed, {0xC10D});
  int accepted = 0;
  const long max_candidates = 400L * n_pc;
  for (long tries = 0; accepted < n_pc; ++tries) {
    if (tries > max_candidates) throw GenerationError("render_frame: rejection sampler stalled");
    const double pick = uniform01(rng) * total;
    const double r1 = uniform01(rng), r2 = uniform01(rng), gate = uniform01(rng);
    const auto i = static_cast<std::size_t>(
        std::upper_bound(cdf.begin(), cdf.end(), pick) - cdf.begin());
    if (i >= n_tri || gate * kMaxAreaStretch >= stretch[i]) continue;
    const auto& [a, b, c] = mesh.triangles[i];
    const double s = std::sqrt(r1);
    const Vec3 p = (1.0 - s) * def_pos[a] + s * (1.0 - r2) * def_pos[b] + s * r2 * def_pos[c];
    f.cloud.row(accepted++) = p.transpose();
  }
  f.keypoints = deformed_keypoints(tmpl, params);
  return f;
}

}  // namespace bagknot::bagsim
