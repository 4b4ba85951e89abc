// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical recurrent recommender. A user-level GRU consumes the last
// session-level hidden state of every finished session and evolves the
// user representation c; c initializes the next session's hidden state
// through s0 = tanh(c W_init + b_init) and, in the All variant, is also
// concatenated to every session-level input.
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sessrec/gru.hpp"
#include "sessrec/session_model.hpp"

namespace sessrec {

enum class HrnnVariant { kInit, kAll };

inline std::string_view variant_name(HrnnVariant v) { return v == HrnnVariant::kAll ? "all" : "init"; }

inline HrnnVariant parse_variant(std::string_view s) {
  if (s == "init") return HrnnVariant::kInit;
  if (s == "all") return HrnnVariant::kAll;
  throw std::invalid_argument("unknown HRNN variant '" + std::string(s) + "' (expected init|all)");
}

/// How far a session's loss is back-propagated across the hierarchy.
enum class Truncation {
  kOneBoundary,  // into c_m, W_init, b_init and one user-GRU step
  kFull,         // through every earlier session of the user
};

/// When user-level gradients (user GRU, W_init, b_init) are applied.
enum class UserUpdate {
  kAtSessionEnd,  // accumulated per lane and applied when the lane's session ends
  kPerStep,       // applied with every step's update
};

struct HrnnConfig {
  TrainConfig base;
  HrnnVariant variant = HrnnVariant::kInit;
  std::size_t user_hidden_size = 0;  // 0 -> same as base.hidden_size
  double dropout_user = 0.0;
  double dropout_init = 0.0;
  Truncation truncation = Truncation::kOneBoundary;
  UserUpdate user_update = UserUpdate::kAtSessionEnd;
  bool freeze_user_level = false;  // never update user GRU, W_init, b_init

  std::size_t user_size() const { return user_hidden_size ? user_hidden_size : base.hidden_size; }

  void validate() const {
    base.validate();
    if (dropout_user < 0.0 || dropout_user >= 1.0 || dropout_init < 0.0 || dropout_init >= 1.0)
      throw std::invalid_argument("dropout must be in [0, 1)");
  }
};

struct HrnnModel {
  LossKind loss = LossKind::kTop1;
  HrnnVariant variant = HrnnVariant::kInit;
  GruParams session_gru;  // input: n_items one-hot (+ d_usr block for All)
  OutputLayer out;
  GruParams user_gru;     // input: d_ses, hidden: d_usr
  Matrix init_w;          // [d_usr x d_ses]
  Matrix init_b;          // [1 x d_ses]

  std::size_t n_items() const { return out.n_items(); }
  std::size_t session_size() const { return session_gru.hidden_size(); }
  std::size_t user_size() const { return user_gru.hidden_size(); }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    self.session_gru.for_each([&](const char* name, auto& m, bool item_indexed) {
      f(std::string("session_gru.") + name, m, item_indexed);
    });
    f(std::string("out.w"), self.out.w, true);
    f(std::string("out.b"), self.out.b, true);
    self.user_gru.for_each(
        [&](const char* name, auto& m, bool) { f(std::string("user_gru.") + name, m, false); });
    f(std::string("init.w"), self.init_w, false);
    f(std::string("init.b"), self.init_b, false);
  }
  template <class F> void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <class F> void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }

  friend bool operator==(const HrnnModel&, const HrnnModel&) = default;
};

/// Session-level parameters are drawn first, in the same order as
/// init_session_rnn, so both models share them for a given seed.
inline HrnnModel init_hrnn(std::size_t n_items, const HrnnConfig& cfg) {
  Rng rng = Rng::derive(cfg.base.seed, 0);
  const std::size_t ds = cfg.base.hidden_size, du = cfg.user_size();
  HrnnModel m;
  m.loss = cfg.base.loss;
  m.variant = cfg.variant;
  const std::size_t d_in = n_items + (cfg.variant == HrnnVariant::kAll ? du : 0);
  m.session_gru = init_gru(rng, n_items, ds);
  if (cfg.variant == HrnnVariant::kAll) {
    // Widen the input weights; rows [n_items, n_items + d_usr) hold the c block.
    GruParams wide(d_in, ds);
    auto widen = [](const Matrix& narrow, Matrix& w) {
      std::copy(narrow.flat().begin(), narrow.flat().end(), w.flat().begin());
    };
    widen(m.session_gru.wz, wide.wz);
    widen(m.session_gru.wr, wide.wr);
    widen(m.session_gru.wh, wide.wh);
    wide.uz = m.session_gru.uz;
    wide.ur = m.session_gru.ur;
    wide.uh = m.session_gru.uh;
    m.session_gru = std::move(wide);
  }
  m.out = OutputLayer(n_items, ds);
  m.out.w = init_uniform(rng, n_items, ds);
  if (cfg.variant == HrnnVariant::kAll) {
    for (Matrix* w : {&m.session_gru.wz, &m.session_gru.wr, &m.session_gru.wh}) {
      Matrix block = init_uniform(rng, du, ds);
      for (std::size_t k = 0; k < du; ++k)
        std::copy(block.row(k).begin(), block.row(k).end(), w->row(n_items + k).begin());
    }
  }
  m.user_gru = init_gru(rng, ds, du);
  m.init_w = init_uniform(rng, du, ds);
  m.init_b = Matrix(1, ds);
  return m;
}

/// c_new = GRU_usr(s_last, c_prev)
inline std::vector<double> update_user_state(const HrnnModel& m, std::span<const double> s_last,
                                             std::span<const double> c_prev, GruStepTape* tape = nullptr) {
  if (s_last.size() != m.session_size() || c_prev.size() != m.user_size())
    throw ShapeError("update_user_state: shape mismatch");
  return gru_step(m.user_gru, GruInput{-1, s_last, 0}, c_prev, tape);
}

/// s0 = tanh(c W_init + b_init)
inline std::vector<double> init_session_state(const HrnnModel& m, std::span<const double> c) {
  if (c.size() != m.user_size()) throw ShapeError("init_session_state: shape mismatch");
  std::vector<double> s(m.init_b.row(0).begin(), m.init_b.row(0).end());
  std::vector<double> cw(m.session_size(), 0.0);
  accumulate_vec_mat(c, m.init_w, cw);
  for (std::size_t j = 0; j < s.size(); ++j) s[j] = std::tanh(cw[j] + s[j]);
  return s;
}

inline GruInput session_input(const HrnnModel& m, std::size_t item, std::span<const double> c_fixed) {
  if (m.variant == HrnnVariant::kAll) return GruInput{static_cast<long>(item), c_fixed, m.n_items()};
  return GruInput{static_cast<long>(item)};
}

/// One session-level step with the user state held fixed.
inline ScoredStep hrnn_step(const HrnnModel& m, std::size_t item, std::span<const double> s_prev,
                            std::span<const double> c_fixed) {
  if (item >= m.n_items()) throw std::out_of_range("hrnn_step: item index out of range");
  ScoredStep r;
  r.state = gru_step(m.session_gru, session_input(m, item, c_fixed), s_prev);
  r.scores = m.out.scores(r.state, output_activation(m.loss));
  return r;
}

}  // namespace sessrec
