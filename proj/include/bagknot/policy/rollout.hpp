#pragma once

// Closed-loop execution: perceive keypoints, sample a chunk, run its first
// h_exec actions through the robot surrogate, replan.

#include "bagknot/bagsim/sequence.hpp"
#include "bagknot/matcher/matcher.hpp"
#include "bagknot/policy/sample.hpp"

namespace bagknot::policy {

/// Keypoint observations over one episode: identification on the first
/// frame, then tracking or per-frame re-identification.
class Perception {
 public:
  Perception(const encoder::EncoderWeights& enc, const matcher::ReferenceSet& ref, matcher::Mode mode, int n_enc)
      : enc_(enc), ref_(ref), mode_(mode), n_enc_(n_enc) {}

  const PointCloud& start(const PointCloud& cloud) {
    state_ = matcher::TrackState{};
    state_.mode = mode_;
    state_.keypoints = matcher::identify_keypoints(matcher::cloud_prefix(cloud, n_enc_), ref_, enc_).keypoints;
    return state_.keypoints;
  }

  const PointCloud& step(const PointCloud& prev, const PointCloud& next) {
    state_ = mode_ == matcher::Mode::Track
                 ? matcher::track_step(state_, prev, next)
                 : matcher::reidentify_step(state_, matcher::cloud_prefix(next, n_enc_), ref_, enc_);
    return state_.keypoints;
  }

 private:
  const encoder::EncoderWeights& enc_;
  const matcher::ReferenceSet& ref_;
  matcher::Mode mode_;
  int n_enc_;
  matcher::TrackState state_;
};

/// Observed keypoints (T x 30) for a pre-rendered episode.
inline RowMatrix perceive_episode(std::span<const bagsim::Frame> frames, const encoder::EncoderWeights& enc,
                                  const matcher::ReferenceSet& ref, matcher::Mode mode, int n_enc) {
  if (frames.empty()) throw InputError("perceive_episode: no frames");
  Perception p(enc, ref, mode, n_enc);
  RowMatrix out(static_cast<Eigen::Index>(frames.size()), kKeypointDim);
  out.row(0) = bagsim::flatten_keypoints(p.start(frames[0].cloud)).transpose();
  for (std::size_t t = 1; t < frames.size(); ++t)
    out.row(static_cast<Eigen::Index>(t)) =
        bagsim::flatten_keypoints(p.step(frames[t - 1].cloud, frames[t].cloud)).transpose();
  return out;
}

enum class Controller { Policy, ExpertReplay };

struct RolloutOptions {
  matcher::Mode mode = matcher::Mode::Track;
  Controller controller = Controller::Policy;
  int n_enc = 1024;  // cloud prefix seen by the encoder
};

/// A policy with every parameter zero, so its noise prediction is constant.
inline PolicyWeights zero_policy(const PolicyConfig& cfg) {
  PolicyWeights w = PolicyWeights::initial(cfg);
  w.params.set_zero();
  return w;
}

inline std::uint64_t replan_seed(std::uint64_t seed, int t) {
  return derive_seed(seed, {0x4E9, static_cast<std::uint64_t>(t)});
}

/// One episode on `tmpl`; frames are rendered from `spec`. Success is
/// judged on ground-truth keypoints.
inline bagsim::EpisodeRecord rollout(const PolicyWeights& policy, const encoder::EncoderWeights& enc,
                                     const matcher::ReferenceSet& ref, const bagsim::BagTemplate& tmpl,
                                     const bagsim::EpisodeSpec& spec, const bagsim::TaskMaps& task,
                                     const RolloutOptions& opt, std::uint64_t seed) {
  if (ref.encoder_hash != enc.hash()) throw ConfigError("rollout: reference built with a different encoder");
  const std::string where = "episode (template " + std::to_string(spec.template_id) + ", " +
                            bagsim::to_string(spec.family) + ", seed " + std::to_string(spec.seed) + ")";
  try {
    const auto frames = bagsim::episode_frames(tmpl, spec);
    const int T = spec.length;
    bagsim::EpisodeRecord rec;
    rec.keypoints = bagsim::keypoint_track(frames);
    rec.observed_keypoints.resize(T, kKeypointDim);
    rec.states.resize(T, kJointDim);
    rec.actions.resize(T, kJointDim);

    RowMatrix expert;
    if (opt.controller == Controller::ExpertReplay) expert = bagsim::expert_demo(rec.keypoints, task).actions;
    const auto schedule = schedule_for(policy.config);

    Perception perception(enc, ref, opt.mode, opt.n_enc);
    JointVector state = task.home;
    ActionChunk chunk;
    for (int t = 0; t < T; ++t) {
      const auto tu = static_cast<std::size_t>(t);
      const PointCloud& kp = t == 0 ? perception.start(frames[0].cloud)
                                    : perception.step(frames[tu - 1].cloud, frames[tu].cloud);
      rec.observed_keypoints.row(t) = bagsim::flatten_keypoints(kp).transpose();
      rec.states.row(t) = state.transpose();
      JointVector action;
      if (opt.controller == Controller::ExpertReplay) {
        action = expert.row(t).transpose();
      } else {
        if (t % policy.config.h_exec == 0) {
          const auto z = embed_observation(kp, state, policy);
          chunk = sample_chunk(z.z_obs, policy, schedule, replan_seed(seed, t), t);
        }
        action = chunk.actions.row(t - chunk.start_step).transpose();
      }
      rec.actions.row(t) = action.transpose();
      state = bagsim::step_dynamics(state, action);
    }
    rec.success = bagsim::judge_success(rec, task, T);
    return rec;
  } catch (const Error& e) {
    throw Error(where + ": " + e.what());
  }
}

}  // namespace bagknot::policy
