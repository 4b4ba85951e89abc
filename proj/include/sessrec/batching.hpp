// SPDX-License-Identifier: Apache-2.0
//
// Session-parallel and user-parallel mini-batch schedules.
//
// Each of the B lanes walks one unit of work: a single session
// (session-parallel) or all sessions of one user in chronological order
// (user-parallel). A step emits, per lane, the current event as input and
// the next event as target. When a lane's unit is exhausted the next unit
// from the (shuffled) queue takes its place; with an empty queue the lane
// goes inactive, and the schedule ends when every lane is inactive.
#pragma once

#include <cstddef>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "sessrec/corpus.hpp"
#include "sessrec/tensor.hpp"

namespace sessrec {

struct BatchStep {
  std::vector<std::size_t> input;
  std::vector<std::size_t> target;
  std::vector<char> active;
  std::vector<char> session_start;  // lane starts a new session at this step
  std::vector<char> session_end;    // target is the last event of the session
  std::vector<char> user_start;     // first step of the lane's user
  std::vector<char> user_end;       // last step of the lane's user
  std::vector<std::size_t> user;    // user index occupying the lane

  std::size_t lanes() const { return input.size(); }
  std::size_t active_count() const {
    std::size_t n = 0;
    for (char a : active) n += a ? 1 : 0;
    return n;
  }
};

using WarningSink = std::function<void(const std::string&)>;

inline void default_warning(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

class LaneSchedule {
 public:
  enum class Mode { kSessionParallel, kUserParallel };

  LaneSchedule(const Corpus& corpus, std::size_t batch_size, Mode mode, Rng& rng,
               const WarningSink& warn = default_warning) {
    if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
    for (const auto& u : corpus.users) {
      Unit user_unit{u.user_index, {}};
      for (const auto& s : u.sessions) {
        if (s.size() < 2) continue;
        if (mode == Mode::kSessionParallel)
          units_.push_back(Unit{u.user_index, {&s}});
        else
          user_unit.sessions.push_back(&s);
      }
      if (mode == Mode::kUserParallel && !user_unit.sessions.empty()) units_.push_back(std::move(user_unit));
    }
    rng.shuffle(units_);
    std::size_t b = batch_size;
    if (units_.size() < b) {
      b = units_.size();
      warn(std::string("batch size ") + std::to_string(batch_size) + " clamped to " + std::to_string(b) + " (only " +
           std::to_string(units_.size()) + (mode == Mode::kSessionParallel ? " sessions)" : " users)"));
    }
    lanes_.resize(b);
    for (auto& lane : lanes_) admit(lane);
  }

  LaneSchedule(const LaneSchedule&) = delete;
  LaneSchedule& operator=(const LaneSchedule&) = delete;
  LaneSchedule(LaneSchedule&&) = default;

  std::size_t lanes() const { return lanes_.size(); }

  /// Fills `step`; returns false once every lane is exhausted.
  bool next(BatchStep& step) {
    const std::size_t b = lanes_.size();
    step.input.assign(b, 0);
    step.target.assign(b, 0);
    step.active.assign(b, 0);
    step.session_start.assign(b, 0);
    step.session_end.assign(b, 0);
    step.user_start.assign(b, 0);
    step.user_end.assign(b, 0);
    step.user.assign(b, 0);
    bool any = false;
    for (std::size_t i = 0; i < b; ++i) {
      auto& lane = lanes_[i];
      if (!lane.unit) continue;
      any = true;
      const Session& s = *lane.unit->sessions[lane.session];
      step.active[i] = 1;
      step.user[i] = lane.unit->user;
      step.input[i] = s.items[lane.pos];
      step.target[i] = s.items[lane.pos + 1];
      step.session_start[i] = lane.pos == 0;
      step.user_start[i] = lane.pos == 0 && lane.session == 0;
      const bool last_in_session = lane.pos + 2 == s.size();
      const bool last_session = lane.session + 1 == lane.unit->sessions.size();
      step.session_end[i] = last_in_session;
      step.user_end[i] = last_in_session && last_session;
      // advance
      if (!last_in_session) {
        ++lane.pos;
      } else if (!last_session) {
        ++lane.session;
        lane.pos = 0;
      } else {
        admit(lane);
      }
    }
    return any;
  }

 private:
  struct Unit {
    std::size_t user;
    std::vector<const Session*> sessions;
  };
  struct Lane {
    const Unit* unit = nullptr;
    std::size_t session = 0;
    std::size_t pos = 0;
  };

  void admit(Lane& lane) {
    lane = Lane{};
    if (next_unit_ < units_.size()) lane.unit = &units_[next_unit_++];
  }

  std::vector<Unit> units_;
  std::size_t next_unit_ = 0;
  std::vector<Lane> lanes_;
};

/// Sessions pooled over all users, order shuffled by `rng`.
inline LaneSchedule session_parallel_batches(const Corpus& train, std::size_t batch_size, Rng& rng,
                                             const WarningSink& warn = default_warning) {
  return LaneSchedule(train, batch_size, LaneSchedule::Mode::kSessionParallel, rng, warn);
}

/// Users in shuffled order, each lane walking one user's sessions.
inline LaneSchedule user_parallel_batches(const Corpus& train, std::size_t batch_size, Rng& rng,
                                          const WarningSink& warn = default_warning) {
  return LaneSchedule(train, batch_size, LaneSchedule::Mode::kUserParallel, rng, warn);
}

}  // namespace sessrec
