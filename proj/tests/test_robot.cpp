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

#include <gtest/gtest.h>

#include <cmath>

#include "psyframe/robot.hpp"

using namespace psyframe;

namespace {

RobotState holding(JointId j, double target_deg, int duration_ms = 100000) {
  RobotState s;
  Waypoint wp;
  wp.targets[joint_index(j)] = target_deg;
  wp.duration_ms = duration_ms;
  s.active = ActiveTrajectory{Trajectory{Move::Punch, {wp}}, 0, 0};
  return s;
}

}  // namespace

TEST(Trajectories, TableContract) {
  for (auto m : kMoves) {
    const auto& t = trajectory_for(m);
    EXPECT_EQ(t.move, m);
    ASSERT_FALSE(t.waypoints.empty());
    EXPECT_EQ(t.waypoints.back().targets, Pose{}) << move_id(m);
    EXPECT_LE(t.total_ms(), kMaxTrajectoryMs);
    for (const auto& wp : t.waypoints) {
      EXPECT_GT(wp.duration_ms, 0);
      for (double a : wp.targets) EXPECT_LE(std::abs(a), kJointLimitDeg);
    }
  }
  const auto& punch = trajectory_for(Move::Punch);
  EXPECT_GE(punch.waypoints.size(), 2u);
  bool shoulder = false, elbow = false;
  for (const auto& wp : punch.waypoints) {
    shoulder |= wp.targets[joint_index(JointId::ShoulderL)] != 0.0;
    elbow |= wp.targets[joint_index(JointId::ElbowL)] != 0.0;
  }
  EXPECT_TRUE(shoulder && elbow);
  EXPECT_GT(trajectory_for(Move::Hadoken).total_ms(), trajectory_for(Move::Punch).total_ms());
  for (const auto& r : kComboRules) {
    EXPECT_GT(trajectory_for(r.result).waypoints.size(), trajectory_for(r.first).waypoints.size());
    EXPECT_GT(trajectory_for(r.result).waypoints.size(), trajectory_for(r.second).waypoints.size());
  }
}

TEST(Servo, FirstOrderResponseAtHundredMs) {
  const double expected = 90.0 * (1.0 - std::exp(-5.0 * 0.1));
  ASSERT_NEAR(expected, 35.41, 0.01);
  auto s = step(holding(JointId::ShoulderL, 90.0), 100);
  EXPECT_NEAR(s.angles[joint_index(JointId::ShoulderL)], expected, 1e-12);
  // Five 20 ms steps compose to the same first-order response.
  auto t = holding(JointId::ShoulderL, 90.0);
  for (int i = 0; i < 5; ++i) t = step(t, 20);
  EXPECT_NEAR(t.angles[joint_index(JointId::ShoulderL)], expected, 1e-9);
}

TEST(Servo, ConvergesWithinLogBound) {
  const double k = kDefaultServoK;
  const double range = 2 * kJointLimitDeg;
  const int bound_ms = static_cast<int>(std::ceil(1000.0 * std::log(range / 0.1) / k));
  RobotState s = holding(JointId::KneeR, 120.0);
  s.angles[joint_index(JointId::KneeR)] = -120.0;
  s = step(s, bound_ms);
  EXPECT_LT(std::abs(s.angles[joint_index(JointId::KneeR)] - 120.0), 0.1);
}

TEST(Robot, IdleAtNeutralIsUnchanged) {
  const RobotState s;
  for (int dt : {1, 20, 333, 5000}) EXPECT_EQ(step(s, dt), s);
  EXPECT_THROW(step(s, 0), Error);
}

TEST(Robot, DispatchQueueAndDrop) {
  auto s = dispatch(RobotState{}, Move::Punch);
  ASSERT_TRUE(s.active.has_value());
  EXPECT_EQ(s.active->trajectory, trajectory_for(Move::Punch));
  s = dispatch(s, Move::Kick);
  s = dispatch(s, Move::Defense);
  EXPECT_EQ(s.queue.size(), 2u);
  s = dispatch(s, Move::Hadoken);
  EXPECT_EQ(s.queue.size(), 2u);
  EXPECT_EQ(s.dropped_moves, 1u);

  std::vector<Move> started{s.active->trajectory.move};
  for (int t = 0; t < 400; ++t) {
    const Move before = s.active->trajectory.move;
    s = step(s, 20);
    if (s.idle()) break;
    if (s.active->trajectory.move != before) started.push_back(s.active->trajectory.move);
  }
  // FIFO drain: Punch, then Kick, then Defense.
  EXPECT_EQ(started, (std::vector<Move>{Move::Punch, Move::Kick, Move::Defense}));
  EXPECT_TRUE(s.idle());
}

TEST(Robot, SettlesToNeutralAfterTrajectory) {
  for (auto m : kMoves) {
    auto s = dispatch(RobotState{}, m);
    const int total = trajectory_for(m).total_ms() + static_cast<int>(std::ceil(5000.0 / s.servo_k));
    for (int t = 0; t < total; t += 20) s = step(s, 20);
    for (double a : s.angles) EXPECT_LT(std::abs(a), 1.0) << move_id(m);
  }
}

TEST(Robot, JointLimitsHoldOverRandomSequences) {
  SplitMix64 rng(2026);
  for (int seq = 0; seq < 1000; ++seq) {
    RobotState s;
    s.servo_k = rng.uniform(0.5, 40.0);
    for (int i = 0; i < 50; ++i) {
      if (rng.uniform() < 0.3) s = dispatch(s, kMoves[rng.below(kNumMoves)]);
      s = step(s, 1 + static_cast<int>(rng.below(200)));
      EXPECT_LE(s.queue.size(), kMaxQueuedMoves);
      for (double a : s.angles) ASSERT_LE(std::abs(a), kJointLimitDeg);
    }
  }
}

TEST(Robot, DeterministicReplay) {
  auto run = [] {
    RobotState s;
    SplitMix64 rng(5);
    for (int i = 0; i < 300; ++i) {
      if (rng.uniform() < 0.1) s = dispatch(s, kMoves[rng.below(kNumMoves)]);
      s = step(s, 20);
    }
    return s;
  };
  EXPECT_EQ(run(), run());
}
