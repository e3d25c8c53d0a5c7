#pragma once

#include "bagknot/core/error.hpp"
#include "bagknot/core/random.hpp"
#include "bagknot/core/types.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

namespace bagknot::bagsim {

struct Range {
  double min = 0.0;
  double max = 0.0;

  double sample(Rng& rng) const { return uniform(rng, min, max); }
  bool contains(double v) const { return v >= min && v <= max; }
};

/// Sampling ranges for procedural bag templates (workspace units).
struct TemplateRanges {
  Range width{0.8, 1.2};
  Range depth{0.6, 0.9};
  Range height{0.7, 1.0};
  Range body_exponent{2.5, 4.0};
  Range handle_arc_radius{0.22, 0.32};
  Range handle_tube_radius{0.010, 0.016};
  /// Handle position as a fraction of the half-width.
  Range attach_fraction{0.45, 0.65};

  void validate() const {
    const std::pair<const char*, const Range*> all[] = {
        {"width", &width},
        {"depth", &depth},
        {"height", &height},
        {"body_exponent", &body_exponent},
        {"handle_arc_radius", &handle_arc_radius},
        {"handle_tube_radius", &handle_tube_radius},
        {"attach_fraction", &attach_fraction}};
    for (const auto& [name, r] : all) {
      if (!(r->min < r->max)) {
        throw ConfigError(std::string("template range '") + name + "' requires min < max");
      }
      if (r->min <= 0.0) {
        throw ConfigError(std::string("template range '") + name + "' must be positive");
      }
    }
    if (attach_fraction.max >= 1.0) throw ConfigError("attach_fraction must stay below 1");
  }
};

/// A superellipsoid bag body open at the top with two circular-arc tube
/// handles. Handle j lies in the plane x = attach_offsets[j] and runs from
/// (x_j, +R, h) at t = 0 over the apex (x_j, 0, h + R) to (x_j, -R, h) at t = 1.
struct BagTemplate {
  int template_id = 0;
  Vec3 body_dims{1.0, 0.75, 0.85};  // width, depth, height
  double body_exponent = 3.0;
  double handle_arc_radius = 0.25;
  double handle_tube_radius = 0.012;
  std::array<double, kNumHandles> attach_offsets{-0.3, 0.3};

  double half_width() const { return 0.5 * body_dims.x(); }
  double half_depth() const { return 0.5 * body_dims.y(); }
  double height() const { return body_dims.z(); }

  /// Rim half-depth at lateral position x.
  double rim_half_depth(double x) const {
    const double r = std::min(1.0, std::abs(x) / half_width());
    return half_depth() * std::pow(1.0 - std::pow(r, body_exponent), 1.0 / body_exponent);
  }

  /// Undeformed centerline of handle `handle` at arc-length fraction t.
  Vec3 handle_centerline(int handle, double t) const {
    const double R = handle_arc_radius;
    return {attach_offsets[static_cast<std::size_t>(handle)], R * std::cos(kPi * t),
            height() + R * std::sin(kPi * t)};
  }

  /// Template coordinate of keypoint id k (0..9): 5 per handle.
  Vec3 keypoint_template(int k) const {
    return handle_centerline(k / kKeypointsPerHandle,
                             kKeypointFractions[static_cast<std::size_t>(k % kKeypointsPerHandle)]);
  }

  void validate() const {
    if (!(body_dims.minCoeff() > 0.0 && handle_arc_radius > 0.0 && handle_tube_radius > 0.0 &&
          body_exponent > 0.0)) {
      throw ConfigError("bag template dimensions must be strictly positive");
    }
    if (!(attach_offsets[0] < 0.0 && attach_offsets[1] > 0.0)) {
      throw ConfigError("handles must attach on opposite sides of the bag");
    }
  }
};

/// Draws a template from `ranges`; the template id is the seed.
inline BagTemplate synthesize_template(const TemplateRanges& ranges, std::int64_t seed) {
  ranges.validate();
  auto rng = make_rng(static_cast<std::uint64_t>(seed), {0x7E3A});
  BagTemplate t;
  t.template_id = static_cast<int>(seed);
  t.body_dims = {ranges.width.sample(rng), ranges.depth.sample(rng), ranges.height.sample(rng)};
  t.body_exponent = ranges.body_exponent.sample(rng);
  const double frac = ranges.attach_fraction.sample(rng);
  t.attach_offsets = {-frac * t.half_width(), frac * t.half_width()};
  t.handle_tube_radius = ranges.handle_tube_radius.sample(rng);
  // the arc has to land inside the rim
  t.handle_arc_radius = std::min(ranges.handle_arc_radius.sample(rng),
                                 0.9 * t.rim_half_depth(t.attach_offsets[1]));
  t.validate();
  return t;
}

inline BagTemplate synthesize_template(std::int64_t seed) {
  return synthesize_template(TemplateRanges{}, seed);
}

}  // namespace bagknot::bagsim
