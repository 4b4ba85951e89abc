// SPDX-License-Identifier: Apache-2.0
//
// Session-only GRU recommender: one-hot item input, one GRU layer, and an
// item-scoring output layer. Training lives in training.hpp.
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "sessrec/gru.hpp"
#include "sessrec/losses.hpp"
#include "sessrec/tensor.hpp"

namespace sessrec {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  LossKind loss = LossKind::kTop1;
  std::size_t batch_size = 50;
  std::size_t epochs = 10;
  double learning_rate = 0.1;
  double momentum = 0.0;
  double dropout_hidden = 0.0;
  std::uint64_t seed = 42;
  std::size_t hidden_size = 100;

  void validate() const {
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2 (negatives come from the other lanes)");
    if (hidden_size < 1) throw std::invalid_argument("hidden_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0, 1)");
    if (dropout_hidden < 0.0 || dropout_hidden >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
  }
};

/// tanh for the pairwise losses, softmax for cross-entropy.
inline Activation output_activation(LossKind loss) {
  return loss == LossKind::kXent ? Activation::kSoftmaxRow : Activation::kTanh;
}

/// Item scoring layer. Stored item-major: row k of `w` and `b` belong to item k.
struct OutputLayer {
  Matrix w;  // [n_items x d_h]
  Matrix b;  // [n_items x 1]

  OutputLayer() = default;
  OutputLayer(std::size_t n_items, std::size_t d_h) : w(n_items, d_h), b(n_items, 1) {}

  std::size_t n_items() const { return w.rows(); }

  double logit(std::span<const double> h, std::size_t item) const { return dot(h, w.row(item)) + b(item, 0); }

  /// g(h W^T + b) over the full catalog.
  std::vector<double> scores(std::span<const double> h, Activation g) const {
    std::vector<double> out(n_items());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = logit(h, k);
    activate_inplace(out, g);
    return out;
  }

  friend bool operator==(const OutputLayer&, const OutputLayer&) = default;
};

struct SessionRnnModel {
  LossKind loss = LossKind::kTop1;
  GruParams gru;
  OutputLayer out;

  std::size_t n_items() const { return out.n_items(); }
  std::size_t hidden_size() const { return gru.hidden_size(); }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    self.gru.for_each([&](const char* name, auto& m, bool item_indexed) { f(std::string("gru.") + name, m, item_indexed); });
    f(std::string("out.w"), self.out.w, true);
    f(std::string("out.b"), self.out.b, true);
  }
  template <class F> void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <class F> void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }

  friend bool operator==(const SessionRnnModel&, const SessionRnnModel&) = default;
};

inline SessionRnnModel init_session_rnn(std::size_t n_items, const TrainConfig& cfg) {
  Rng rng = Rng::derive(cfg.seed, 0);
  SessionRnnModel m;
  m.loss = cfg.loss;
  m.gru = init_gru(rng, n_items, cfg.hidden_size);
  m.out = OutputLayer(n_items, cfg.hidden_size);
  m.out.w = init_uniform(rng, n_items, cfg.hidden_size);
  return m;
}

struct ScoredStep {
  std::vector<double> scores;
  std::vector<double> state;
};

/// One inference step: GRU on the one-hot item, then g(state W^T + b).
inline ScoredStep score_step(const SessionRnnModel& m, std::size_t item, std::span<const double> state) {
  if (item >= m.n_items()) throw std::out_of_range("score_step: item index out of range");
  ScoredStep r;
  r.state = gru_step(m.gru, GruInput{static_cast<long>(item)}, state);
  r.scores = m.out.scores(r.state, output_activation(m.loss));
  return r;
}

}  // namespace sessrec
