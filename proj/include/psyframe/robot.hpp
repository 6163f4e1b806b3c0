// Copyright 2026 The psyframe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <initializer_list>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "psyframe/command.hpp"
#include "psyframe/common.hpp"

namespace psyframe {

enum class JointId : std::uint8_t {
  ShoulderL = 0,
  ShoulderR,
  ElbowL,
  ElbowR,
  HipL,
  HipR,
  KneeL,
  KneeR,
  Torso,
};

inline constexpr std::size_t kNumJoints = 9;
inline constexpr std::array<std::string_view, kNumJoints> kJointNames = {
    "shoulder_l", "shoulder_r", "elbow_l", "elbow_r", "hip_l", "hip_r", "knee_l", "knee_r", "torso"};
inline constexpr double kJointLimitDeg = 120.0;
inline constexpr double kDefaultServoK = 5.0;  ///< 1/s
inline constexpr std::size_t kMaxQueuedMoves = 2;
inline constexpr int kMaxTrajectoryMs = 3000;

constexpr std::size_t joint_index(JointId j) { return static_cast<std::size_t>(j); }

using Pose = std::array<double, kNumJoints>;

struct Waypoint {
  Pose targets{};
  int duration_ms = 0;
  bool operator==(const Waypoint&) const = default;
};

struct Trajectory {
  Move move = Move::Defense;
  std::vector<Waypoint> waypoints;

  int total_ms() const {
    int t = 0;
    for (const auto& w : waypoints) t += w.duration_ms;
    return t;
  }
  bool operator==(const Trajectory&) const = default;
};

namespace detail {

inline Pose pose(std::initializer_list<std::pair<JointId, double>> set) {
  Pose p{};
  for (auto [j, deg] : set) p[joint_index(j)] = deg;
  return p;
}

inline std::array<Trajectory, kNumMoves> build_trajectory_table() {
  using J = JointId;
  const Pose neutral{};
  // Reusable phrases.
  const Pose guard = pose({{J::ShoulderL, 60}, {J::ShoulderR, 60}, {J::ElbowL, 100}, {J::ElbowR, 100}, {J::Torso, -10}});
  const Pose step_l = pose({{J::HipL, 30}, {J::KneeL, -40}, {J::HipR, -20}, {J::Torso, 10}});
  const Pose step_r = pose({{J::HipR, 30}, {J::KneeR, -40}, {J::HipL, -20}, {J::Torso, 10}});
  const Pose cock_l = pose({{J::ShoulderL, 40}, {J::ElbowL, 90}});
  const Pose jab_l = pose({{J::ShoulderL, 90}, {J::Torso, 15}});
  const Pose cock_r = pose({{J::ShoulderR, 40}, {J::ElbowR, 90}});
  const Pose jab_r = pose({{J::ShoulderR, 90}, {J::Torso, -15}});
  const Pose load_both = pose({{J::ShoulderL, 30}, {J::ShoulderR, 30}, {J::ElbowL, 110}, {J::ElbowR, 110}, {J::Torso, -20}});
  const Pose thrust_both = pose({{J::ShoulderL, 100}, {J::ShoulderR, 100}, {J::Torso, 20}});
  const Pose chamber_r = pose({{J::HipR, 30}, {J::KneeR, -90}});
  const Pose kick_r = pose({{J::HipR, 90}, {J::Torso, -10}});
  const Pose crouch = pose({{J::HipL, 40}, {J::HipR, 40}, {J::KneeL, -70}, {J::KneeR, -70}, {J::ElbowR, 110}});
  const Pose rise_upper =
      pose({{J::ShoulderR, 115}, {J::ElbowR, 60}, {J::HipL, 5}, {J::HipR, 5}, {J::KneeL, -10}, {J::KneeR, -10}, {J::Torso, 15}});
  const Pose spin_kick = pose({{J::HipR, 110}, {J::HipL, -30}, {J::Torso, -40}, {J::ShoulderL, 45}, {J::ShoulderR, -45}});
  const Pose orb = pose({{J::ShoulderL, 20}, {J::ShoulderR, 20}, {J::ElbowL, 115}, {J::ElbowR, 115}, {J::Torso, -30},
                         {J::KneeL, -30}, {J::KneeR, -30}});
  const Pose release = pose({{J::ShoulderL, 95}, {J::ShoulderR, 95}, {J::Torso, 25}, {J::HipL, 20}, {J::KneeL, -20}});

  std::array<Trajectory, kNumMoves> t;
  t[move_index(Move::Defense)] = {Move::Defense, {{guard, 300}, {neutral, 300}}};
  t[move_index(Move::Forward)] = {Move::Forward, {{step_l, 250}, {step_r, 250}, {neutral, 250}}};
  t[move_index(Move::Punch)] = {Move::Punch, {{cock_l, 150}, {jab_l, 200}, {neutral, 250}}};
  t[move_index(Move::HeavyPunch)] = {Move::HeavyPunch, {{load_both, 250}, {thrust_both, 250}, {neutral, 300}}};
  t[move_index(Move::Kick)] = {Move::Kick, {{chamber_r, 200}, {kick_r, 250}, {neutral, 300}}};
  t[move_index(Move::PunchCombo)] = {
      Move::PunchCombo,
      {{step_l, 200}, {cock_l, 150}, {jab_l, 150}, {cock_r, 150}, {jab_r, 150}, {cock_l, 120}, {jab_l, 150}, {neutral, 300}}};
  t[move_index(Move::Uppercut)] = {Move::Uppercut, {{step_l, 200}, {crouch, 300}, {rise_upper, 250}, {neutral, 350}}};
  t[move_index(Move::KickCombo)] = {
      Move::KickCombo, {{step_r, 200}, {chamber_r, 180}, {kick_r, 200}, {chamber_r, 150}, {spin_kick, 300}, {neutral, 350}}};
  t[move_index(Move::Hadoken)] = {Move::Hadoken, {{step_l, 200}, {orb, 450}, {release, 300}, {release, 300}, {neutral, 400}}};
  return t;
}

}  // namespace detail

/// Static waypoint table; every entry ends at the neutral pose.
inline const Trajectory& trajectory_for(Move m) {
  static const auto table = detail::build_trajectory_table();
  return table[move_index(m)];
}

struct ActiveTrajectory {
  Trajectory trajectory;
  std::size_t waypoint = 0;
  int elapsed_ms = 0;  ///< within the current waypoint
  bool operator==(const ActiveTrajectory&) const = default;
};

struct RobotState {
  Pose angles{};
  std::optional<ActiveTrajectory> active;
  std::deque<Move> queue;
  double servo_k = kDefaultServoK;
  std::uint64_t dropped_moves = 0;

  bool idle() const { return !active.has_value(); }
  bool operator==(const RobotState&) const = default;
};

inline RobotState dispatch(RobotState s, Move m) {
  if (s.idle()) {
    s.active = ActiveTrajectory{trajectory_for(m), 0, 0};
  } else if (s.queue.size() < kMaxQueuedMoves) {
    s.queue.push_back(m);
  } else {
    ++s.dropped_moves;
  }
  return s;
}

/// First-order approach toward `target` over dt_ms.
inline double servo_toward(double angle, double target, double k, double dt_ms) {
  return angle + (1.0 - std::exp(-k * dt_ms / 1000.0)) * (target - angle);
}

namespace detail {

inline void servo_pose(RobotState& s, const Pose& target, int dt_ms) {
  for (std::size_t j = 0; j < kNumJoints; ++j)
    s.angles[j] = std::clamp(servo_toward(s.angles[j], target[j], s.servo_k, dt_ms), -kJointLimitDeg, kJointLimitDeg);
}

}  // namespace detail

/// Advances the robot by dt_ms. Waypoint boundaries inside the step are
/// honoured exactly; when idle the joints keep settling toward neutral.
inline RobotState step(RobotState s, int dt_ms) {
  require(dt_ms > 0, "robot step: dt_ms must be > 0");
  int remaining = dt_ms;
  while (remaining > 0) {
    if (s.idle()) {
      if (s.angles != Pose{}) detail::servo_pose(s, Pose{}, remaining);
      break;
    }
    auto& a = *s.active;
    const auto& wp = a.trajectory.waypoints[a.waypoint];
    const int chunk = std::min(remaining, wp.duration_ms - a.elapsed_ms);
    detail::servo_pose(s, wp.targets, chunk);
    a.elapsed_ms += chunk;
    remaining -= chunk;
    if (a.elapsed_ms >= wp.duration_ms) {
      a.elapsed_ms = 0;
      if (++a.waypoint == a.trajectory.waypoints.size()) {
        s.active.reset();
        if (!s.queue.empty()) {
          s.active = ActiveTrajectory{trajectory_for(s.queue.front()), 0, 0};
          s.queue.pop_front();
        }
      }
    }
  }
  return s;
}

}  // namespace psyframe
