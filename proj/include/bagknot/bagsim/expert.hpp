#pragma once

// Scripted expert and the geometric success judge.
//
// The task is a keypoint-conditioned trajectory family: four frozen affine
// maps send the flattened keypoints to joint-space stage waypoints. The robot
// surrogate moves each joint at most kMaxJointStep per step toward its
// absolute target.

#include "bagknot/bagsim/surface.hpp"
#include "bagknot/core/error.hpp"
#include "bagknot/core/random.hpp"
#include "bagknot/core/types.hpp"

#include <array>
#include <span>
#include <vector>

namespace bagknot::bagsim {

inline constexpr int kNumStages = 4;
inline constexpr int kDefaultHorizon = 160;
inline constexpr double kMaxJointStep = 0.1;
inline constexpr double kWaypointTolerance = 0.02;
inline constexpr double kSuccessTolerance = 0.05;
inline constexpr double kJointLimit = kPi;

using StageMap = Eigen::Matrix<double, kJointDim, kKeypointDim, Eigen::RowMajor>;
using KeypointVector = Eigen::Matrix<double, kKeypointDim, 1>;

struct TaskMaps {
  std::array<StageMap, kNumStages> gain;
  std::array<JointVector, kNumStages> offset;
  JointVector home = JointVector::Zero();
  std::uint64_t seed = 0;

  JointVector waypoint(int stage, const KeypointVector& x) const {
    return gain[static_cast<std::size_t>(stage)] * x + offset[static_cast<std::size_t>(stage)];
  }
};

/// Draws the frozen stage maps for one experiment.
inline TaskMaps sample_task(std::uint64_t seed, double gain_scale = 0.12,
                            double offset_scale = 0.8) {
  auto rng = make_rng(seed, {0x7A5C});
  TaskMaps task;
  task.seed = seed;
  for (int j = 0; j < kNumStages; ++j) {
    auto& m = task.gain[static_cast<std::size_t>(j)];
    for (int r = 0; r < kJointDim; ++r)
      for (int c = 0; c < kKeypointDim; ++c) m(r, c) = uniform(rng, -gain_scale, gain_scale);
    auto& b = task.offset[static_cast<std::size_t>(j)];
    for (int r = 0; r < kJointDim; ++r) b(r) = uniform(rng, -offset_scale, offset_scale);
  }
  return task;
}

inline KeypointVector flatten_keypoints(const PointCloud& kp) {
  if (kp.rows() != kNumKeypoints) throw InputError("expected 10 keypoints");
  KeypointVector x;
  for (int k = 0; k < kNumKeypoints; ++k) x.segment<3>(3 * k) = kp.row(k).transpose();
  return x;
}

/// Last state index of each stage for an episode of `horizon` steps.
inline std::array<int, kNumStages> stage_boundaries(int horizon = kDefaultHorizon) {
  std::array<int, kNumStages> b{};
  for (int j = 0; j < kNumStages; ++j) b[static_cast<std::size_t>(j)] = (j + 1) * horizon / kNumStages - 1;
  return b;
}

/// One step of the robot surrogate: per-joint rate limit, then joint limits.
inline JointVector step_dynamics(const JointVector& state, const JointVector& action) {
  JointVector delta = (action - state).cwiseMax(-kMaxJointStep).cwiseMin(kMaxJointStep);
  return (state + delta).cwiseMax(-kJointLimit).cwiseMin(kJointLimit);
}

/// Rows are time steps: keypoints T x 30, states and actions T x 26.
struct Demonstration {
  RowMatrix keypoints;
  RowMatrix observed_keypoints;
  RowMatrix states;
  RowMatrix actions;
  std::array<int, kNumStages> stage_boundaries{};
  std::uint64_t task_seed = 0;
  std::uint64_t seed = 0;
};

inline RowMatrix keypoint_track(std::span<const Frame> frames) {
  RowMatrix x(static_cast<Eigen::Index>(frames.size()), kKeypointDim);
  for (std::size_t t = 0; t < frames.size(); ++t)
    x.row(static_cast<Eigen::Index>(t)) = flatten_keypoints(frames[t].keypoints).transpose();
  return x;
}

/// Expert on a keypoint trajectory (T x 30).
///
/// During stage j the target follows a cubic Hermite path from the state at
/// the stage start to w_j(x_{t+1}). Tangents at interior waypoints are the
/// Catmull-Rom chords (w_{j+1} - w_{j-1}) / 2, so the path passes through
/// each waypoint at its boundary without stopping; it starts and ends at
/// rest. A stop at every waypoint would make states just before and just
/// after a boundary nearly identical while their futures differ.
inline Demonstration expert_demo(const RowMatrix& keypoints, const TaskMaps& task,
                                 std::uint64_t seed = 0) {
  const int horizon = static_cast<int>(keypoints.rows());
  if (horizon < 2 * kNumStages) throw InputError("expert_demo: trajectory too short");
  if (keypoints.cols() != kKeypointDim) throw InputError("expert_demo: expected 30 keypoint columns");
  Demonstration demo;
  demo.keypoints = keypoints;
  demo.observed_keypoints = keypoints;
  demo.states.resize(horizon, kJointDim);
  demo.actions.resize(horizon, kJointDim);
  demo.stage_boundaries = stage_boundaries(horizon);
  demo.task_seed = task.seed;
  demo.seed = seed;

  auto x_at = [&](int t) -> KeypointVector { return keypoints.row(t).transpose(); };
  // chord tangent at the end of `stage`, in units of one stage length
  auto end_tangent = [&](int stage, const JointVector& from, const KeypointVector& x) -> JointVector {
    if (stage + 1 >= kNumStages) return JointVector::Zero();
    return 0.5 * (task.waypoint(stage + 1, x) - from);
  };
  JointVector state = task.home;
  JointVector stage_start = state;
  JointVector start_tangent = JointVector::Zero();
  int stage = 0;
  int start_index = 0;
  for (int t = 0; t < horizon; ++t) {
    demo.states.row(t) = state.transpose();
    JointVector target;
    if (t + 1 >= horizon) {
      target = task.waypoint(kNumStages - 1, x_at(t));
    } else {
      const int boundary = demo.stage_boundaries[static_cast<std::size_t>(stage)];
      const double u = static_cast<double>(t + 1 - start_index) / (boundary - start_index);
      const double u2 = u * u, u3 = u2 * u;
      const JointVector goal = task.waypoint(stage, x_at(t + 1));
      target = (2 * u3 - 3 * u2 + 1) * stage_start + (u3 - 2 * u2 + u) * start_tangent +
               (-2 * u3 + 3 * u2) * goal + (u3 - u2) * end_tangent(stage, stage_start, x_at(t + 1));
    }
    demo.actions.row(t) = target.transpose();
    state = step_dynamics(state, target);
    if (t + 1 < horizon && t + 1 == demo.stage_boundaries[static_cast<std::size_t>(stage)]) {
      const double miss = (state - task.waypoint(stage, x_at(t + 1))).lpNorm<Eigen::Infinity>();
      if (miss > kWaypointTolerance) {
        throw DemoInfeasibleError("expert_demo: stage " + std::to_string(stage + 1) +
                                  " waypoint missed by " + std::to_string(miss) + " rad");
      }
      start_tangent = end_tangent(stage, stage_start, x_at(t + 1));
      stage_start = state;
      start_index = t + 1;
      stage = std::min(stage + 1, kNumStages - 1);
    }
  }
  return demo;
}

inline Demonstration expert_demo(std::span<const Frame> frames, const TaskMaps& task,
                                 std::uint64_t seed = 0) {
  return expert_demo(keypoint_track(frames), task, seed);
}

/// Everything recorded while running one episode.
struct EpisodeRecord {
  RowMatrix states;               // T x 26
  RowMatrix actions;              // T x 26
  RowMatrix keypoints;            // T x 30, ground truth
  RowMatrix observed_keypoints;   // T x 30, what the policy saw
  bool success = false;
};

/// Per-stage distance to the waypoint at each boundary (joint-space inf-norm).
inline std::array<double, kNumStages> waypoint_errors(const RowMatrix& states,
                                                      const RowMatrix& keypoints,
                                                      const TaskMaps& task, int horizon) {
  const auto bounds = stage_boundaries(horizon);
  std::array<double, kNumStages> err{};
  for (int j = 0; j < kNumStages; ++j) {
    const int b = bounds[static_cast<std::size_t>(j)];
    const KeypointVector x = keypoints.row(b).transpose();
    const JointVector s = states.row(b).transpose();
    err[static_cast<std::size_t>(j)] = (s - task.waypoint(j, x)).lpNorm<Eigen::Infinity>();
  }
  return err;
}

inline bool judge_success(const RowMatrix& states, const RowMatrix& keypoints,
                          const TaskMaps& task, int horizon = kDefaultHorizon) {
  if (states.rows() < horizon || keypoints.rows() < horizon) {
    throw InputError("judge_success: episode shorter than the task horizon");
  }
  if (states.cols() != kJointDim || keypoints.cols() != kKeypointDim) {
    throw InputError("judge_success: unexpected state or keypoint width");
  }
  for (double e : waypoint_errors(states, keypoints, task, horizon))
    if (!(e <= kSuccessTolerance)) return false;
  const KeypointVector x_final = keypoints.row(horizon - 1).transpose();
  const JointVector s_final = states.row(horizon - 1).transpose();
  return (s_final - task.waypoint(kNumStages - 1, x_final)).lpNorm<Eigen::Infinity>() <=
         kSuccessTolerance;
}

inline bool judge_success(const EpisodeRecord& ep, const TaskMaps& task,
                          int horizon = kDefaultHorizon) {
  return judge_success(ep.states, ep.keypoints, task, horizon);
}

}  // namespace bagknot::bagsim
