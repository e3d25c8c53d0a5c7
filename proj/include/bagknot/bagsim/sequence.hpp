#pragma once

#include "bagknot/bagsim/surface.hpp"

#include <vector>

namespace bagknot::bagsim {

/// Smooth-step interpolation from `start` to `end` over `length` frames.
/// All frames share one sampling seed so the cloud follows the material.
inline std::vector<Frame> generate_sequence(const BagTemplate& tmpl, const DeformationParams& start,
                                            const DeformationParams& end, int length,
                                            std::uint64_t seed, int n_pc = 4096) {
  if (length < 2) throw InputError("generate_sequence: length must be at least 2");
  std::vector<Frame> frames;
  frames.reserve(static_cast<std::size_t>(length));
  for (int k = 0; k < length; ++k) {
    const double s = smooth_step(static_cast<double>(k) / (length - 1));
    auto params = interpolate(start, end, s);
    params.family = start.family;
    try {
      frames.push_back(render_frame(tmpl, params, n_pc, seed));
    } catch (const GenerationError& e) {
      throw GenerationError("generate_sequence: frame " + std::to_string(k) + ": " + e.what());
    }
  }
  return frames;
}

/// Description of one simulated episode; frames are regenerated on demand.
struct EpisodeSpec {
  int template_id = 0;
  Family family = Family::VC;
  std::uint64_t seed = 0;
  int length = 160;
  int n_pc = 4096;

  DeformationParams start_params() const { return sample_family(family, seed); }
  DeformationParams end_params() const {
    return drift_target(start_params(), derive_seed(seed, {0xE17D}));
  }
  std::uint64_t cloud_seed() const { return derive_seed(seed, {0xC1A0}); }
};

inline std::vector<Frame> episode_frames(const BagTemplate& tmpl, const EpisodeSpec& spec) {
  return generate_sequence(tmpl, spec.start_params(), spec.end_params(), spec.length,
                           spec.cloud_seed(), spec.n_pc);
}

}  // namespace bagknot::bagsim
