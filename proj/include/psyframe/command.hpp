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

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "psyframe/common.hpp"
#include "psyframe/model.hpp"
#include "psyframe/synth.hpp"

namespace psyframe {

/// Robot moves in move-table order: five base moves, then four combos.
enum class Move : std::uint8_t {
  Defense = 0,
  Forward,
  Punch,
  HeavyPunch,
  Kick,
  PunchCombo,
  Uppercut,
  KickCombo,
  Hadoken,
};

inline constexpr std::size_t kNumMoves = 9;
inline constexpr std::size_t kNumBaseMoves = 5;

inline constexpr std::array<Move, kNumMoves> kMoves = {Move::Defense,    Move::Forward,  Move::Punch,
                                                       Move::HeavyPunch, Move::Kick,     Move::PunchCombo,
                                                       Move::Uppercut,   Move::KickCombo, Move::Hadoken};

/// Stable wire identifiers.
inline constexpr std::array<std::string_view, kNumMoves> kMoveIds = {
    "defense", "forward", "punch", "heavy_punch", "kick", "punch_combo", "uppercut", "kick_combo", "hadoken"};

/// Names as they appear in the move table.
inline constexpr std::array<std::string_view, kNumMoves> kMoveDisplayNames = {
    "defense", "forward", "punch", "heavy punch", "kick", "punch combo", "Uppercut", "kick combo", "Hadoken"};

constexpr std::size_t move_index(Move m) { return static_cast<std::size_t>(m); }
constexpr bool is_base(Move m) { return move_index(m) < kNumBaseMoves; }
constexpr bool is_combo(Move m) { return !is_base(m); }
constexpr std::string_view move_id(Move m) { return kMoveIds[move_index(m)]; }
constexpr std::string_view move_display_name(Move m) { return kMoveDisplayNames[move_index(m)]; }

inline Move move_from_id(std::string_view id) {
  for (std::size_t i = 0; i < kNumMoves; ++i)
    if (kMoveIds[i] == id) return kMoves[i];
  throw Error("unknown move '" + std::string(id) + "'");
}

/// Left pedal -> Defense, right pedal -> Forward; the three two-hand classes
/// take the three handle moves in label order.
constexpr Move class_to_move(ClassLabel c) {
  switch (c) {
    case ClassLabel::PullForward: return Move::Punch;
    case ClassLabel::LeftLegPedal: return Move::Defense;
    case ClassLabel::PushTwoHands: return Move::HeavyPunch;
    case ClassLabel::RightLegPedal: return Move::Forward;
    case ClassLabel::PushUpward: return Move::Kick;
  }
  return Move::Defense;
}

// ---------------------------------------------------------------------------
// Leaky integrator
// ---------------------------------------------------------------------------

struct IntegratorParams {
  double lambda = 0.9;
  double theta = 5.0;
  int refractory = 2;  ///< ticks
  int combo_window = 8;  ///< ticks

  void validate() const {
    require(lambda > 0.0 && lambda < 1.0, "integrator: lambda must be in (0, 1)");
    require(theta > 0.0, "integrator: theta must be > 0");
    require(refractory >= 0, "integrator: refractory must be >= 0");
    require(combo_window >= 1, "integrator: combo_window must be >= 1");
  }
  bool operator==(const IntegratorParams&) const = default;
};

struct IntegratorState {
  std::array<double, kNumBaseMoves> acc{};  ///< indexed by base Move
  int refractory_remaining = 0;
  bool operator==(const IntegratorState&) const = default;
};

struct IntegrateResult {
  IntegratorState state;
  std::optional<Move> trigger;
};

/// One tick of the per-move leaky integrator. Class posteriors are routed to
/// their base moves; crossing theta fires the move, resets and arms refractory.
inline IntegrateResult integrate(IntegratorState s, const Posterior& p, const IntegratorParams& prm) {
  if (s.refractory_remaining > 0) {
    --s.refractory_remaining;
    for (double& a : s.acc) a *= prm.lambda;
    return {s, std::nullopt};
  }
  std::array<double, kNumBaseMoves> in{};
  for (std::size_t c = 0; c < kNumClasses; ++c) in[move_index(class_to_move(static_cast<ClassLabel>(c)))] = p.probs[c];
  std::size_t best = 0;
  for (std::size_t m = 0; m < kNumBaseMoves; ++m) {
    s.acc[m] = prm.lambda * s.acc[m] + in[m];
    if (s.acc[m] > s.acc[best]) best = m;  // strict: lowest table row wins ties
  }
  if (s.acc[best] >= prm.theta) {
    s.acc.fill(0.0);
    s.refractory_remaining = prm.refractory;
    return {s, kMoves[best]};
  }
  return {s, std::nullopt};
}

/// Tick without a usable posterior (rejected window): accumulators only leak.
inline IntegratorState leak(IntegratorState s, const IntegratorParams& prm) {
  if (s.refractory_remaining > 0) --s.refractory_remaining;
  for (double& a : s.acc) a *= prm.lambda;
  return s;
}

// ---------------------------------------------------------------------------
// Combos
// ---------------------------------------------------------------------------

struct ComboRule {
  Move first, second, result;
};

inline constexpr std::array<ComboRule, 4> kComboRules = {{
    {Move::Forward, Move::Punch, Move::PunchCombo},
    {Move::Forward, Move::HeavyPunch, Move::Uppercut},
    {Move::Forward, Move::Kick, Move::KickCombo},
    {Move::Punch, Move::HeavyPunch, Move::Hadoken},
}};

constexpr std::optional<Move> combo_of(Move first, Move second) {
  for (const auto& r : kComboRules)
    if (r.first == first && r.second == second) return r.result;
  return std::nullopt;
}

constexpr bool starts_combo(Move m) {
  for (const auto& r : kComboRules)
    if (r.first == m) return true;
  return false;
}

enum class EventSource : std::uint8_t { Base, Combo };

struct MoveEvent {
  std::int64_t tick = 0;
  Move move = Move::Defense;
  EventSource source = EventSource::Base;
  bool operator==(const MoveEvent&) const = default;
};

inline MoveEvent make_event(std::int64_t tick, Move m) {
  return {tick, m, is_combo(m) ? EventSource::Combo : EventSource::Base};
}

struct HeldMove {
  Move move;
  std::int64_t tick;
  bool operator==(const HeldMove&) const = default;
};

/// Hold-and-upgrade state: at most one base move waiting for its partner.
struct ComboState {
  std::optional<HeldMove> held;
  bool operator==(const ComboState&) const = default;
};

/// Releases a held move whose window has run out by `tick`. The event carries
/// the expiry tick (held tick + window), not the tick of the call.
inline void combo_expire(ComboState& s, std::int64_t tick, int window, std::vector<MoveEvent>& out) {
  if (s.held && tick - s.held->tick >= window) {
    out.push_back(make_event(s.held->tick + window, s.held->move));
    s.held.reset();
  }
}

/// Feeds one base-move trigger through the combo resolver.
inline std::vector<MoveEvent> combo_resolve(ComboState& s, Move trigger, std::int64_t tick, int window) {
  require(is_base(trigger), "combo_resolve: trigger must be a base move");
  std::vector<MoveEvent> out;
  combo_expire(s, tick, window, out);
  if (s.held) {
    if (const auto combo = combo_of(s.held->move, trigger)) {
      out.push_back(make_event(tick, *combo));
      s.held.reset();
      return out;
    }
    out.push_back(make_event(tick, s.held->move));
    s.held.reset();
  }
  if (starts_combo(trigger)) {
    s.held = HeldMove{trigger, tick};
  } else {
    out.push_back(make_event(tick, trigger));
  }
  return out;
}

/// Advances time with no new trigger; emits an expired hold if any.
inline std::vector<MoveEvent> combo_tick(ComboState& s, std::int64_t tick, int window) {
  std::vector<MoveEvent> out;
  combo_expire(s, tick, window, out);
  return out;
}

}  // namespace psyframe
