// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch training for the session-level and hierarchical models.
//
// Every step scores, for each active lane, only the targets of the active
// lanes: a lane's own target is its positive, the other lanes' targets are
// its negatives (the lane's own item excluded if it repeats). The step's
// loss is back-propagated through the lane's current session unroll down
// to its initial state; for the hierarchical model the gradient reaching
// the initial state is accumulated per session and pushed through the
// initialization map and one user-GRU step when the session ends (or
// further back, with Truncation::kFull).
#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sessrec/batching.hpp"
#include "sessrec/corpus.hpp"
#include "sessrec/gru.hpp"
#include "sessrec/hier_model.hpp"
#include "sessrec/losses.hpp"
#include "sessrec/session_model.hpp"
#include "sessrec/tensor.hpp"

namespace sessrec {

using Schedule = LaneSchedule::Mode;

template <class Model>
struct TrainResult {
  Model model;
  std::vector<double> epoch_losses;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

namespace detail {

// Non-owning view over the trainable parts of either model.
struct NetView {
  GruParams* ses = nullptr;
  OutputLayer* out = nullptr;
  GruParams* usr = nullptr;  // null for the session-only model
  Matrix* init_w = nullptr;
  Matrix* init_b = nullptr;
  bool all_input = false;

  bool hier() const { return usr != nullptr; }
};

inline NetView view_of(SessionRnnModel& m) { return NetView{&m.gru, &m.out}; }
inline NetView view_of(HrnnModel& m) {
  return NetView{&m.session_gru, &m.out, &m.user_gru, &m.init_w, &m.init_b, m.variant == HrnnVariant::kAll};
}

inline SessionRnnModel zeros_like(const SessionRnnModel& m) {
  SessionRnnModel g = m;
  g.for_each([](const std::string&, Matrix& x, bool) { x.fill(0.0); });
  return g;
}
inline HrnnModel zeros_like(const HrnnModel& m) {
  HrnnModel g = m;
  g.for_each([](const std::string&, Matrix& x, bool) { x.fill(0.0); });
  return g;
}

struct TrainerOptions {
  LossKind loss = LossKind::kTop1;
  OptimizerConfig opt;
  double dropout_session = 0.0;
  double dropout_user = 0.0;
  double dropout_init = 0.0;
  Truncation truncation = Truncation::kOneBoundary;
  UserUpdate user_update = UserUpdate::kAtSessionEnd;
  bool freeze_user_level = false;
  bool apply_updates = true;  // false: only accumulate gradients
};

struct EpochOutcome {
  double objective = 0.0;  // sum over steps of the step's mean row loss
  double row_loss = 0.0;   // sum of row losses
  std::size_t rows = 0;    // rows that had at least one negative
  std::size_t targets = 0;
};

class LaneTrainer {
 public:
  LaneTrainer(NetView params, NetView grads, const TrainerOptions& opts)
      : p_(params), g_(grads), opts_(opts), ds_(params.ses->hidden_size()),
        du_(params.hier() ? params.usr->hidden_size() : 0), n_items_(params.out->n_items()) {
    auto add_state = [&](Matrix& m) { states_.emplace_back(m); };
    p_.ses->for_each([&](const char*, Matrix& m, bool) { add_state(m); });
    add_state(p_.out->w);
    add_state(p_.out->b);
    if (p_.hier()) {
      p_.usr->for_each([&](const char*, Matrix& m, bool) { add_state(m); });
      add_state(*p_.init_w);
      add_state(*p_.init_b);
    }
    ses_row_mark_.assign(p_.ses->input_size(), 0);
    out_row_mark_.assign(n_items_, 0);
  }

  EpochOutcome run_epoch(const Corpus& corpus, std::size_t batch_size, Schedule schedule, Rng& schedule_rng,
                         Rng& dropout_rng, const WarningSink& warn) {
    LaneSchedule sched(corpus, batch_size, schedule, schedule_rng, warn);
    lanes_.assign(sched.lanes(), Lane{});
    EpochOutcome outcome;
    BatchStep step;
    while (sched.next(step)) run_step(step, dropout_rng, outcome);
    return outcome;
  }

 private:
  struct Segment {
    std::vector<double> c_used;  // dropped user state consumed by the session
    std::vector<double> user_mask;
    std::vector<double> s0_tanh;
    std::vector<double> init_mask;
    bool has_user_step = false;
    GruStepTape user_tape;  // produced the user state from the previous session
    std::vector<GruStepTape> steps;
    std::vector<double> d_s0;      // accumulated gradient w.r.t. the (dropped) s0
    std::vector<double> d_c_used;  // accumulated gradient w.r.t. c_used via the All input block
  };

  struct Lane {
    std::vector<double> h;  // session-level hidden state
    std::vector<double> c;  // user state (undropped)
    bool has_pending_user_step = false;
    GruStepTape pending_user_tape;
    std::vector<Segment> segments;
    std::vector<double> out_mask;
    std::vector<double> h_out;
  };

  void begin_session(Lane& lane, bool user_start, Rng& drng) {
    if (user_start) {
      lane.segments.clear();
      lane.c.assign(du_, 0.0);
      lane.has_pending_user_step = false;
    }
    if (opts_.truncation == Truncation::kOneBoundary) lane.segments.clear();
    Segment seg;
    if (p_.hier()) {
      seg.has_user_step = lane.has_pending_user_step;
      if (seg.has_user_step) seg.user_tape = std::move(lane.pending_user_tape);
      lane.has_pending_user_step = false;
      seg.user_mask = dropout_mask(du_, opts_.dropout_user, drng, true);
      seg.c_used = lane.c;
      if (!seg.user_mask.empty())
        for (std::size_t k = 0; k < du_; ++k) seg.c_used[k] *= seg.user_mask[k];
      std::vector<double> pre(ds_, 0.0);
      accumulate_vec_mat(seg.c_used, *p_.init_w, pre);
      seg.s0_tanh.resize(ds_);
      for (std::size_t j = 0; j < ds_; ++j) seg.s0_tanh[j] = std::tanh(pre[j] + (*p_.init_b)(0, j));
      seg.init_mask = dropout_mask(ds_, opts_.dropout_init, drng, true);
      lane.h = seg.s0_tanh;
      if (!seg.init_mask.empty())
        for (std::size_t j = 0; j < ds_; ++j) lane.h[j] *= seg.init_mask[j];
      seg.d_s0.assign(ds_, 0.0);
      seg.d_c_used.assign(du_, 0.0);
    } else {
      lane.h.assign(ds_, 0.0);
    }
    lane.segments.push_back(std::move(seg));
  }

  GruInput input_for(const Segment& seg, std::size_t item) const {
    if (p_.all_input) return GruInput{static_cast<long>(item), seg.c_used, n_items_};
    return GruInput{static_cast<long>(item)};
  }

  void mark_ses_row(std::size_t r) {
    if (!ses_row_mark_[r]) {
      ses_row_mark_[r] = 1;
      ses_rows_.push_back(r);
    }
  }
  void mark_out_row(std::size_t r) {
    if (!out_row_mark_[r]) {
      out_row_mark_[r] = 1;
      out_rows_.push_back(r);
    }
  }

  // Back-propagates d_h (gradient w.r.t. the hidden state after the last
  // step of `seg`) through all of its steps.
  void backprop_segment_steps(Segment& seg, std::vector<double> d_h) {
    std::vector<double> d_prev(ds_);
    std::vector<double> d_dense(p_.all_input ? du_ : 0);
    for (std::size_t s = seg.steps.size(); s-- > 0;) {
      const auto& tape = seg.steps[s];
      std::fill(d_dense.begin(), d_dense.end(), 0.0);
      gru_step_backward(*p_.ses, tape, d_h, *g_.ses, d_prev, d_dense);
      mark_ses_row(static_cast<std::size_t>(tape.item));
      for (std::size_t k = 0; k < d_dense.size(); ++k) seg.d_c_used[k] += d_dense[k];
      d_h.swap(d_prev);
    }
    if (p_.hier())
      for (std::size_t j = 0; j < ds_; ++j) seg.d_s0[j] += d_h[j];
  }

  // Pushes the accumulated initial-state gradient of segment k through the
  // initialization map and the user-GRU step that produced its user state.
  void flush_user_level(Lane& lane, std::size_t k, const std::vector<double>* extra_dc = nullptr) {
    Segment& seg = lane.segments[k];
    std::vector<double> d_pre(ds_);
    for (std::size_t j = 0; j < ds_; ++j) {
      const double m = seg.init_mask.empty() ? 1.0 : seg.init_mask[j];
      d_pre[j] = seg.d_s0[j] * m * (1.0 - seg.s0_tanh[j] * seg.s0_tanh[j]);
    }
    for (std::size_t j = 0; j < ds_; ++j) (*g_.init_b)(0, j) += d_pre[j];
    accumulate_outer(seg.c_used, d_pre, *g_.init_w);
    std::vector<double> d_c = seg.d_c_used;
    accumulate_vec_mat_t(d_pre, *p_.init_w, d_c);
    for (std::size_t q = 0; q < du_; ++q) {
      if (!seg.user_mask.empty()) d_c[q] *= seg.user_mask[q];
      if (extra_dc) d_c[q] += (*extra_dc)[q];
    }
    std::fill(seg.d_s0.begin(), seg.d_s0.end(), 0.0);
    std::fill(seg.d_c_used.begin(), seg.d_c_used.end(), 0.0);
    user_pending_ = true;
    if (!seg.has_user_step) return;
    std::vector<double> d_c_prev(du_), d_s_last(ds_, 0.0);
    gru_step_backward(*p_.usr, seg.user_tape, d_c, *g_.usr, d_c_prev, d_s_last);
    if (opts_.truncation == Truncation::kFull && k > 0) {
      backprop_segment_steps(lane.segments[k - 1], d_s_last);
      flush_user_level(lane, k - 1, &d_c_prev);
    }
  }

  void run_step(const BatchStep& step, Rng& drng, EpochOutcome& outcome) {
    const std::size_t b = step.lanes();
    std::vector<std::size_t> act;
    for (std::size_t i = 0; i < b; ++i)
      if (step.active[i]) act.push_back(i);

    // Forward.
    for (std::size_t i : act) {
      Lane& lane = lanes_[i];
      if (step.session_start[i]) begin_session(lane, step.user_start[i], drng);
      Segment& seg = lane.segments.back();
      GruStepTape tape;
      lane.h = gru_step(*p_.ses, input_for(seg, step.input[i]), lane.h, &tape);
      seg.steps.push_back(std::move(tape));
      lane.out_mask = dropout_mask(ds_, opts_.dropout_session, drng, true);
      lane.h_out = lane.h;
      if (!lane.out_mask.empty())
        for (std::size_t j = 0; j < ds_; ++j) lane.h_out[j] *= lane.out_mask[j];
    }
    outcome.targets += act.size();

    // Sampled scores: row i, column j = target of lane act[j].
    const std::size_t n = act.size();
    const bool pairwise = opts_.loss != LossKind::kXent;
    std::vector<double> y(n * n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const double l = p_.out->logit(lanes_[act[r]].h_out, step.target[act[c]]);
        y[r * n + c] = pairwise ? std::tanh(l) : l;
      }

    std::vector<double> dy(n * n, 0.0);
    std::size_t rows = 0;
    double step_loss = 0.0;
    std::vector<std::size_t> neg_cols;
    std::vector<double> negs, xs;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t own = step.target[act[r]];
      neg_cols.clear();
      for (std::size_t c = 0; c < n; ++c)
        if (c != r && step.target[act[c]] != own) neg_cols.push_back(c);
      if (neg_cols.empty()) continue;
      ++rows;
      if (pairwise) {
        negs.clear();
        for (auto c : neg_cols) negs.push_back(y[r * n + c]);
        const LossResult lr =
            opts_.loss == LossKind::kTop1 ? top1_loss(y[r * n + r], negs) : bpr_loss(y[r * n + r], negs);
        step_loss += lr.loss;
        dy[r * n + r] += lr.d_positive;
        for (std::size_t q = 0; q < neg_cols.size(); ++q) dy[r * n + neg_cols[q]] += lr.d_negatives[q];
      } else {
        xs.assign(1, y[r * n + r]);
        for (auto c : neg_cols) xs.push_back(y[r * n + c]);
        const XentResult xr = xent_loss(xs, 0);
        step_loss += xr.loss;
        dy[r * n + r] += xr.d_scores[0];
        for (std::size_t q = 0; q < neg_cols.size(); ++q) dy[r * n + neg_cols[q]] += xr.d_scores[q + 1];
      }
    }
    if (!std::isfinite(step_loss)) throw DivergenceError("non-finite training loss");
    outcome.row_loss += step_loss;
    outcome.rows += rows;
    if (rows > 0) outcome.objective += step_loss / static_cast<double>(rows);

    // Backward.
    if (rows > 0) {
      const double scale = 1.0 / static_cast<double>(rows);
      std::vector<double> d_hout(ds_);
      for (std::size_t r = 0; r < n; ++r) {
        Lane& lane = lanes_[act[r]];
        std::fill(d_hout.begin(), d_hout.end(), 0.0);
        bool any = false;
        for (std::size_t c = 0; c < n; ++c) {
          double d = dy[r * n + c];
          if (d == 0.0) continue;
          d *= scale;
          if (pairwise) d *= 1.0 - y[r * n + c] * y[r * n + c];
          const std::size_t item = step.target[act[c]];
          auto w_row = p_.out->w.row(item);
          auto gw_row = g_.out->w.row(item);
          for (std::size_t j = 0; j < ds_; ++j) {
            gw_row[j] += d * lane.h_out[j];
            d_hout[j] += d * w_row[j];
          }
          g_.out->b(item, 0) += d;
          mark_out_row(item);
          any = true;
        }
        if (!any) continue;
        if (!lane.out_mask.empty())
          for (std::size_t j = 0; j < ds_; ++j) d_hout[j] *= lane.out_mask[j];
        backprop_segment_steps(lane.segments.back(), d_hout);
        if (p_.hier() && opts_.user_update == UserUpdate::kPerStep)
          flush_user_level(lane, lane.segments.size() - 1);
      }
    }

    // Session boundaries: close the user-level gradient and advance c.
    for (std::size_t i : act) {
      if (!step.session_end[i]) continue;
      Lane& lane = lanes_[i];
      if (p_.hier()) {
        flush_user_level(lane, lane.segments.size() - 1);
        GruStepTape ut;
        lane.c = gru_step(*p_.usr, GruInput{-1, lane.h, 0}, lane.c, &ut);
        lane.pending_user_tape = std::move(ut);
        lane.has_pending_user_step = true;
      }
      if (step.user_end[i]) lane.segments.clear();
    }

    if (opts_.apply_updates) apply();
  }

  void apply() {
    std::size_t s = 0;
    auto step_dense = [&](Matrix& p, Matrix& g) {
      adagrad_momentum_step(p, g, states_[s++], opts_.opt);
      g.fill(0.0);
    };
    auto step_rows = [&](Matrix& p, Matrix& g, const std::vector<std::size_t>& rows) {
      adagrad_momentum_step_rows(p, g, states_[s++], opts_.opt, rows);
      for (auto r : rows)
        for (double& v : g.row(r)) v = 0.0;
    };
    std::sort(ses_rows_.begin(), ses_rows_.end());
    std::sort(out_rows_.begin(), out_rows_.end());
    if (p_.all_input)
      for (std::size_t k = 0; k < du_; ++k) mark_ses_row(n_items_ + k);
    std::vector<Matrix*> ses_p, ses_g;
    std::vector<bool> ses_sparse;
    p_.ses->for_each([&](const char*, Matrix& m, bool sparse) {
      ses_p.push_back(&m);
      ses_sparse.push_back(sparse);
    });
    g_.ses->for_each([&](const char*, Matrix& m, bool) { ses_g.push_back(&m); });
    for (std::size_t k = 0; k < ses_p.size(); ++k) {
      if (ses_sparse[k])
        step_rows(*ses_p[k], *ses_g[k], ses_rows_);
      else
        step_dense(*ses_p[k], *ses_g[k]);
    }
    step_rows(p_.out->w, g_.out->w, out_rows_);
    step_rows(p_.out->b, g_.out->b, out_rows_);
    for (auto r : ses_rows_) ses_row_mark_[r] = 0;
    for (auto r : out_rows_) out_row_mark_[r] = 0;
    ses_rows_.clear();
    out_rows_.clear();

    if (p_.hier()) {
      std::vector<Matrix*> up, ug;
      p_.usr->for_each([&](const char*, Matrix& m, bool) { up.push_back(&m); });
      g_.usr->for_each([&](const char*, Matrix& m, bool) { ug.push_back(&m); });
      up.push_back(p_.init_w);
      ug.push_back(g_.init_w);
      up.push_back(p_.init_b);
      ug.push_back(g_.init_b);
      const bool update = user_pending_ && !opts_.freeze_user_level;
      for (std::size_t k = 0; k < up.size(); ++k) {
        if (update)
          step_dense(*up[k], *ug[k]);
        else if (user_pending_)
          ug[k]->fill(0.0);
      }
      user_pending_ = false;
    }
  }

  NetView p_, g_;
  TrainerOptions opts_;
  std::size_t ds_, du_, n_items_;
  std::vector<OptState> states_;
  std::vector<Lane> lanes_;
  std::vector<char> ses_row_mark_, out_row_mark_;
  std::vector<std::size_t> ses_rows_, out_rows_;
  bool user_pending_ = false;
};

inline TrainerOptions options_from(const TrainConfig& cfg) {
  TrainerOptions o;
  o.loss = cfg.loss;
  o.opt.learning_rate = cfg.learning_rate;
  o.opt.momentum = cfg.momentum;
  o.dropout_session = cfg.dropout_hidden;
  return o;
}

inline TrainerOptions options_from(const HrnnConfig& cfg) {
  TrainerOptions o = options_from(cfg.base);
  o.dropout_user = cfg.dropout_user;
  o.dropout_init = cfg.dropout_init;
  o.truncation = cfg.truncation;
  o.user_update = cfg.user_update;
  o.freeze_user_level = cfg.freeze_user_level;
  return o;
}

inline void require_trainable(const Corpus& train) {
  for (const auto& u : train.users)
    for (const auto& s : u.sessions)
      if (s.size() >= 2) return;
  throw DataError("training corpus has no session with at least 2 events");
}

template <class Model>
TrainResult<Model> train_loop(Model model, const Corpus& train, const TrainConfig& base, const TrainerOptions& opts,
                              Schedule schedule, const EpochCallback& on_epoch, const WarningSink& warn) {
  require_trainable(train);
  Model grads = zeros_like(model);
  LaneTrainer trainer(view_of(model), view_of(grads), opts);
  Rng schedule_rng = Rng::derive(base.seed, 1);
  Rng dropout_rng = Rng::derive(base.seed, 2);
  TrainResult<Model> result;
  for (std::size_t e = 0; e < base.epochs; ++e) {
    // Only the first epoch reports a clamped batch size.
    const WarningSink sink = e == 0 ? warn : WarningSink([](const std::string&) {});
    const EpochOutcome o = trainer.run_epoch(train, base.batch_size, schedule, schedule_rng, dropout_rng, sink);
    const double mean = o.rows ? o.row_loss / static_cast<double>(o.rows) : 0.0;
    result.epoch_losses.push_back(mean);
    if (on_epoch) on_epoch(e + 1, mean);
  }
  result.model = std::move(model);
  return result;
}

template <class Model>
double objective_impl(Model& model, const Corpus& corpus, const TrainConfig& base, TrainerOptions opts,
                      Schedule schedule, Model* grads_out) {
  Model grads = zeros_like(model);
  opts.apply_updates = false;
  LaneTrainer trainer(view_of(model), view_of(grads), opts);
  Rng schedule_rng = Rng::derive(base.seed, 1);
  Rng dropout_rng = Rng::derive(base.seed, 2);
  const EpochOutcome o =
      trainer.run_epoch(corpus, base.batch_size, schedule, schedule_rng, dropout_rng, [](const std::string&) {});
  if (grads_out) *grads_out = std::move(grads);
  return o.objective;
}

}  // namespace detail

/// Trains the session-only model. The schedule defaults to session-parallel
/// batches; user-parallel is available for like-for-like comparisons.
inline TrainResult<SessionRnnModel> train_session_rnn(const Corpus& train, const TrainConfig& cfg,
                                                      Schedule schedule = Schedule::kSessionParallel,
                                                      const EpochCallback& on_epoch = {},
                                                      const WarningSink& warn = default_warning) {
  cfg.validate();
  return detail::train_loop(init_session_rnn(train.n_items(), cfg), train, cfg, detail::options_from(cfg), schedule,
                            on_epoch, warn);
}

/// Continues training from given parameters (used by reduction tests).
inline TrainResult<SessionRnnModel> train_session_rnn_from(SessionRnnModel init, const Corpus& train,
                                                           const TrainConfig& cfg, Schedule schedule,
                                                           const EpochCallback& on_epoch = {},
                                                           const WarningSink& warn = default_warning) {
  cfg.validate();
  return detail::train_loop(std::move(init), train, cfg, detail::options_from(cfg), schedule, on_epoch, warn);
}

inline TrainResult<HrnnModel> train_hrnn(const Corpus& train, const HrnnConfig& cfg, const EpochCallback& on_epoch = {},
                                         const WarningSink& warn = default_warning) {
  cfg.validate();
  return detail::train_loop(init_hrnn(train.n_items(), cfg), train, cfg.base, detail::options_from(cfg),
                            Schedule::kUserParallel, on_epoch, warn);
}

inline TrainResult<HrnnModel> train_hrnn_from(HrnnModel init, const Corpus& train, const HrnnConfig& cfg,
                                              const EpochCallback& on_epoch = {},
                                              const WarningSink& warn = default_warning) {
  cfg.validate();
  return detail::train_loop(std::move(init), train, cfg.base, detail::options_from(cfg), Schedule::kUserParallel,
                            on_epoch, warn);
}

/// One pass over `corpus` with frozen parameters. Returns the sum over steps
/// of the mean row loss and, when `grads` is non-null, its gradient under
/// the configured truncation.
inline double session_rnn_objective(SessionRnnModel& model, const Corpus& corpus, const TrainConfig& cfg,
                                    Schedule schedule, SessionRnnModel* grads = nullptr) {
  return detail::objective_impl(model, corpus, cfg, detail::options_from(cfg), schedule, grads);
}

inline double hrnn_objective(HrnnModel& model, const Corpus& corpus, const HrnnConfig& cfg,
                             HrnnModel* grads = nullptr) {
  return detail::objective_impl(model, corpus, cfg.base, detail::options_from(cfg), Schedule::kUserParallel, grads);
}

}  // namespace sessrec
