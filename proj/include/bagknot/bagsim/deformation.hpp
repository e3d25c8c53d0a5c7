#pragma once

#include "bagknot/bagsim/bag_template.hpp"
#include "bagknot/core/error.hpp"
#include "bagknot/core/random.hpp"
#include "bagknot/core/types.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace bagknot::bagsim {

/// Vertical-, horizontal-, diagonal-compressed, twisted-flat, inclined-flat.
enum class Family { VC, HC, DC, TF, IF };

inline constexpr std::array<Family, 5> kAllFamilies{Family::VC, Family::HC, Family::DC,
                                                     Family::TF, Family::IF};

inline std::string to_string(Family f) {
  switch (f) {
    case Family::VC: return "VC";
    case Family::HC: return "HC";
    case Family::DC: return "DC";
    case Family::TF: return "TF";
    case Family::IF: return "IF";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  for (auto f : kAllFamilies)
    if (to_string(f) == s) return f;
  throw InputError("unknown deformation family '" + s + "' (expected VC, HC, DC, TF or IF)");
}

inline bool is_flat_family(Family f) { return f == Family::TF || f == Family::IF; }

/// One radial-basis bump of the smooth warp field.
struct WarpControl {
  Vec3 center = Vec3::Zero();
  Vec3 amplitude = Vec3::Zero();
};

inline constexpr double kWarpWidth = 0.35;
/// Warp magnitude bound relative to body height.
inline constexpr double kWarpBoundFraction = 0.15;

struct DeformationParams {
  double orientation_angle = 0.0;  // 0 upright, pi/2 lying outward
  double compression = 1.0;        // 1 = rope-like bundle
  double twist_angle = 0.0;        // inward twist at t = 1, linear in t
  double incline_shear = 0.0;      // lateral shear per unit height above the rim
  double flatten = 0.0;
  std::vector<WarpControl> warp;
  Family family = Family::VC;

  /// Upper bound on the warp displacement magnitude anywhere.
  double warp_bound() const {
    double s = 0.0;
    for (const auto& w : warp) s += w.amplitude.norm();
    return s;
  }

  Vec3 warp_displacement(const Vec3& p) const {
    Vec3 d = Vec3::Zero();
    for (const auto& w : warp) {
      const double r2 = (p - w.center).squaredNorm();
      d += w.amplitude * std::exp(-r2 / (2.0 * kWarpWidth * kWarpWidth));
    }
    return d;
  }

  bool finite() const {
    bool ok = std::isfinite(orientation_angle) && std::isfinite(compression) &&
              std::isfinite(twist_angle) && std::isfinite(incline_shear) && std::isfinite(flatten);
    for (const auto& w : warp) ok = ok && w.center.allFinite() && w.amplitude.allFinite();
    return ok;
  }
};

/// The undeformed template shape.
inline DeformationParams identity_deformation() { return DeformationParams{}; }

/// Parameter ranges defining one family; degenerate ranges pin the value.
struct FamilyRanges {
  Range orientation;
  Range compression;
  Range flatten;
  Range twist;
  Range shear;
};

inline FamilyRanges family_ranges(Family f) {
  const Range compressed{0.8, 1.0};
  const Range rope_flat{0.0, 0.1};
  const Range splayed{0.0, 0.2};
  const Range flat{0.7, 1.0};
  const Range upright{-0.1, 0.1};
  const Range none{0.0, 0.0};
  switch (f) {
    case Family::VC: return {upright, compressed, rope_flat, none, none};
    case Family::HC: return {{kPi / 2 - 0.1, kPi / 2 + 0.1}, compressed, rope_flat, none, none};
    case Family::DC: return {{kPi / 6, kPi / 3}, compressed, rope_flat, none, none};
    case Family::TF: return {upright, splayed, flat, {kPi / 3, 2 * kPi / 3}, none};
    case Family::IF: return {upright, splayed, flat, none, {0.4, 0.8}};
  }
  throw InputError("unknown deformation family");
}

namespace detail {
inline double draw(const Range& r, Rng& rng) { return r.min == r.max ? r.min : r.sample(rng); }
}  // namespace detail

/// Total warp amplitude drawn for every sample (workspace units).
inline constexpr double kSampleWarpAmplitude = 0.04;

inline DeformationParams sample_family(Family family, std::uint64_t seed) {
  auto rng = make_rng(seed, {0xFA417, static_cast<std::uint64_t>(family)});
  const auto r = family_ranges(family);
  DeformationParams p;
  p.family = family;
  p.orientation_angle = detail::draw(r.orientation, rng);
  p.compression = detail::draw(r.compression, rng);
  p.flatten = detail::draw(r.flatten, rng);
  p.twist_angle = detail::draw(r.twist, rng);
  p.incline_shear = detail::draw(r.shear, rng);
  constexpr int kControls = 3;
  std::array<double, kControls> share{};
  double total = 0.0;
  for (auto& s : share) total += (s = uniform(rng, 0.2, 1.0));
  const double budget = uniform(rng, 0.5, 1.0) * kSampleWarpAmplitude;
  for (int i = 0; i < kControls; ++i) {
    WarpControl w;
    w.center = {uniform(rng, -0.6, 0.6), uniform(rng, -0.45, 0.45), uniform(rng, 0.0, 1.3)};
    Vec3 dir{normal(rng), normal(rng), normal(rng)};
    w.amplitude = dir.normalized() * (budget * share[static_cast<std::size_t>(i)] / total);
    p.warp.push_back(w);
  }
  return p;
}

inline DeformationParams sample_family(const std::string& family, std::uint64_t seed) {
  return sample_family(parse_family(family), seed);
}

/// Blend between two parameter sets; the warp fields blend linearly.
inline DeformationParams interpolate(const DeformationParams& a, const DeformationParams& b,
                                     double s) {
  if (s <= 0.0) return a;
  if (s >= 1.0) return b;
  auto lerp = [s](double x, double y) { return x + s * (y - x); };
  DeformationParams p;
  p.family = a.family;
  p.orientation_angle = lerp(a.orientation_angle, b.orientation_angle);
  p.compression = lerp(a.compression, b.compression);
  p.twist_angle = lerp(a.twist_angle, b.twist_angle);
  p.incline_shear = lerp(a.incline_shear, b.incline_shear);
  p.flatten = lerp(a.flatten, b.flatten);
  bool same_centers = a.warp.size() == b.warp.size();
  for (std::size_t i = 0; same_centers && i < a.warp.size(); ++i)
    same_centers = a.warp[i].center == b.warp[i].center;
  if (same_centers) {
    for (std::size_t i = 0; i < a.warp.size(); ++i)
      p.warp.push_back({a.warp[i].center,
                        a.warp[i].amplitude + s * (b.warp[i].amplitude - a.warp[i].amplitude)});
    return p;
  }
  for (auto w : a.warp) {
    w.amplitude *= (1.0 - s);
    p.warp.push_back(w);
  }
  for (auto w : b.warp) {
    w.amplitude *= s;
    p.warp.push_back(w);
  }
  return p;
}

inline double smooth_step(double u) { return u * u * (3.0 - 2.0 * u); }

/// Episode drift target: every free parameter moves toward a family boundary
/// by at most `fraction` of its distance to that boundary.
inline DeformationParams drift_target(const DeformationParams& start, std::uint64_t seed,
                                      double fraction = 0.2) {
  auto rng = make_rng(seed, {0xD21F7});
  const auto r = family_ranges(start.family);
  DeformationParams end = start;
  auto step = [&](double v, const Range& range) {
    if (range.min == range.max) return v;
    const double lo = -fraction * std::max(0.0, v - range.min);
    const double hi = fraction * std::max(0.0, range.max - v);
    return v + (hi > lo ? uniform(rng, lo, hi) : 0.0);
  };
  end.orientation_angle = step(start.orientation_angle, r.orientation);
  end.compression = step(start.compression, r.compression);
  end.flatten = step(start.flatten, r.flatten);
  end.twist_angle = step(start.twist_angle, r.twist);
  end.incline_shear = step(start.incline_shear, r.shear);
  return end;
}

/// True when every free parameter lies inside the family's ranges.
inline bool within_family(const DeformationParams& p, Family f) {
  const auto r = family_ranges(f);
  return r.orientation.contains(p.orientation_angle) && r.compression.contains(p.compression) &&
         r.flatten.contains(p.flatten) && r.twist.contains(p.twist_angle) &&
         r.shear.contains(p.incline_shear);
}

}  // namespace bagknot::bagsim
