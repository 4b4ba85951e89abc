// SPDX-License-Identifier: Apache-2.0
//
// SequentialScorer adapters for every model kind.
#pragma once

#include <unordered_map>
#include <vector>

#include "sessrec/baselines.hpp"
#include "sessrec/evaluate.hpp"
#include "sessrec/hier_model.hpp"
#include "sessrec/session_model.hpp"

namespace sessrec {

class PpopScorer : public SequentialScorer {
 public:
  explicit PpopScorer(const PopModel& m) : m_(m) {}
  std::size_t n_items() const override { return m_.n_items; }
  void begin_user(std::size_t user, const UserHistory*) override { user_ = user; }
  void begin_session() override { context_.clear(); }
  void observe(std::size_t item, std::vector<double>& out) override {
    context_.push_back(item);
    out = score_ppop(m_, user_, context_);
  }

 private:
  const PopModel& m_;
  std::size_t user_ = 0;
  std::vector<std::size_t> context_;
};

class KnnScorer : public SequentialScorer {
 public:
  explicit KnnScorer(const KnnModel& m) : m_(m) {}
  std::size_t n_items() const override { return m_.n_items; }
  void begin_user(std::size_t, const UserHistory*) override {}
  void begin_session() override {}
  void observe(std::size_t item, std::vector<double>& out) override { out = score_item_knn(m_, item); }

 private:
  const KnnModel& m_;
};

/// Session-only RNN; the hidden state is reset at every session.
class SessionRnnScorer : public SequentialScorer {
 public:
  explicit SessionRnnScorer(const SessionRnnModel& m) : m_(m) {}
  std::size_t n_items() const override { return m_.n_items(); }
  void begin_user(std::size_t, const UserHistory*) override {}
  void begin_session() override { h_.assign(m_.hidden_size(), 0.0); }
  void observe(std::size_t item, std::vector<double>& out) override {
    auto r = score_step(m_, item, h_);
    h_ = std::move(r.state);
    out = std::move(r.scores);
  }

 protected:
  const SessionRnnModel& m_;
  std::vector<double> h_;
};

/// Session RNN trained on concatenated user histories. The user's training
/// events are replayed first and the state carries into the test session,
/// so the model also predicts the test session's first event.
class ConcatRnnScorer : public SessionRnnScorer {
 public:
  using SessionRnnScorer::SessionRnnScorer;
  bool needs_history() const override { return true; }
  void begin_user(std::size_t, const UserHistory* history) override {
    h_.assign(m_.hidden_size(), 0.0);
    first_.clear();
    if (!history) return;
    for (const auto& s : history->sessions)
      for (auto item : s.items) h_ = gru_step(m_.gru, GruInput{static_cast<long>(item)}, h_);
    if (history->event_count() > 0) first_ = m_.out.scores(h_, output_activation(m_.loss));
  }
  void begin_session() override {}
  bool score_first(std::vector<double>& out) override {
    if (first_.empty()) return false;
    out = first_;
    return true;
  }

 private:
  std::vector<double> first_;
};

/// Hierarchical model. Each history session is replayed exactly as in
/// training: its inputs are events 1..n-1 and the hidden state after the
/// last input updates the user state.
class HrnnScorer : public SequentialScorer {
 public:
  explicit HrnnScorer(const HrnnModel& m) : m_(m) {}
  std::size_t n_items() const override { return m_.n_items(); }
  bool needs_history() const override { return true; }
  void begin_user(std::size_t, const UserHistory* history) override {
    c_.assign(m_.user_size(), 0.0);
    if (!history) return;
    for (const auto& s : history->sessions) {
      if (s.size() < 2) continue;
      std::vector<double> h = init_session_state(m_, c_);
      for (std::size_t k = 0; k + 1 < s.size(); ++k) h = gru_step(m_.session_gru, session_input(m_, s.items[k], c_), h);
      c_ = update_user_state(m_, h, c_);
    }
  }
  void begin_session() override { h_ = init_session_state(m_, c_); }
  void observe(std::size_t item, std::vector<double>& out) override {
    auto r = hrnn_step(m_, item, h_, c_);
    h_ = std::move(r.state);
    out = std::move(r.scores);
  }

 private:
  const HrnnModel& m_;
  std::vector<double> c_, h_;
};

}  // namespace sessrec
