// SPDX-License-Identifier: Apache-2.0
//
// Single GRU layer with a hand-derived backward pass.
//
//   z  = sigmoid(x Wz + h Uz + bz)
//   r  = sigmoid(x Wr + h Ur + br)
//   hc = tanh(x Wh + (r * h) Uh + bh)
//   h' = (1 - z) * h + z * hc
//
// Inputs may be a one-hot item index (row lookup into W, never
// materialized), a dense block occupying a contiguous range of W rows, or
// both at once (concatenation).
#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sessrec/tensor.hpp"

namespace sessrec {

struct GruParams {
  Matrix wz, wr, wh;  // [d_in x d_h]
  Matrix uz, ur, uh;  // [d_h x d_h]
  Matrix bz, br, bh;  // [1 x d_h]

  GruParams() = default;
  GruParams(std::size_t d_in, std::size_t d_h)
      : wz(d_in, d_h), wr(d_in, d_h), wh(d_in, d_h),
        uz(d_h, d_h), ur(d_h, d_h), uh(d_h, d_h),
        bz(1, d_h), br(1, d_h), bh(1, d_h) {}

  std::size_t input_size() const { return wz.rows(); }
  std::size_t hidden_size() const { return wz.cols(); }

  /// Visits (name, matrix, item_indexed) for every parameter.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("wz", self.wz, true);
    f("wr", self.wr, true);
    f("wh", self.wh, true);
    f("uz", self.uz, false);
    f("ur", self.ur, false);
    f("uh", self.uh, false);
    f("bz", self.bz, false);
    f("br", self.br, false);
    f("bh", self.bh, false);
  }
  template <class F> void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <class F> void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }

  void zero() {
    for_each([](const char*, Matrix& m, bool) { m.fill(0.0); });
  }

  friend bool operator==(const GruParams&, const GruParams&) = default;
};

using GruGrads = GruParams;

/// Weights uniform in +-sqrt(6/(fan_in+fan_out)); biases zero.
inline GruParams init_gru(Rng& rng, std::size_t d_in, std::size_t d_h) {
  if (d_in == 0 || d_h == 0) throw std::invalid_argument("init_gru: dimensions must be positive");
  GruParams p(d_in, d_h);
  p.wz = init_uniform(rng, d_in, d_h);
  p.wr = init_uniform(rng, d_in, d_h);
  p.wh = init_uniform(rng, d_in, d_h);
  p.uz = init_uniform(rng, d_h, d_h);
  p.ur = init_uniform(rng, d_h, d_h);
  p.uh = init_uniform(rng, d_h, d_h);
  return p;
}

/// One row of GRU input. `item` < 0 means no one-hot part.
struct GruInput {
  long item = -1;
  std::span<const double> dense{};
  std::size_t dense_offset = 0;
};

/// Cached activations of one row-step.
struct GruStepTape {
  long item = -1;
  std::vector<double> dense;
  std::size_t dense_offset = 0;
  std::vector<double> h_prev, z, r, hc;
};

namespace detail {
inline void add_input_projection(const Matrix& w, const GruInput& in, std::span<double> out) {
  if (in.item >= 0) {
    if (static_cast<std::size_t>(in.item) >= w.rows()) throw ShapeError("gru: item index out of range");
    auto row = w.row(static_cast<std::size_t>(in.item));
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += row[j];
  }
  if (!in.dense.empty()) {
    if (in.dense_offset + in.dense.size() > w.rows()) throw ShapeError("gru: dense input exceeds input size");
    for (std::size_t k = 0; k < in.dense.size(); ++k) {
      const double v = in.dense[k];
      if (v == 0.0) continue;
      auto row = w.row(in.dense_offset + k);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += v * row[j];
    }
  }
}
}  // namespace detail

/// Forward of one row. Returns h_new; fills `tape` when non-null.
inline std::vector<double> gru_step(const GruParams& p, const GruInput& in, std::span<const double> h_prev,
                                    GruStepTape* tape = nullptr) {
  const std::size_t dh = p.hidden_size();
  if (h_prev.size() != dh) throw ShapeError("gru_step: hidden size mismatch");
  std::vector<double> z(dh, 0.0), r(dh, 0.0), hc(dh, 0.0);

  detail::add_input_projection(p.wz, in, z);
  accumulate_vec_mat(h_prev, p.uz, z);
  detail::add_input_projection(p.wr, in, r);
  accumulate_vec_mat(h_prev, p.ur, r);
  for (std::size_t j = 0; j < dh; ++j) {
    z[j] = sigmoid(z[j] + p.bz(0, j));
    r[j] = sigmoid(r[j] + p.br(0, j));
  }
  std::vector<double> rh(dh);
  for (std::size_t j = 0; j < dh; ++j) rh[j] = r[j] * h_prev[j];
  detail::add_input_projection(p.wh, in, hc);
  accumulate_vec_mat(rh, p.uh, hc);
  std::vector<double> h_new(dh);
  for (std::size_t j = 0; j < dh; ++j) {
    hc[j] = std::tanh(hc[j] + p.bh(0, j));
    h_new[j] = (1.0 - z[j]) * h_prev[j] + z[j] * hc[j];
  }
  if (tape) {
    tape->item = in.item;
    tape->dense.assign(in.dense.begin(), in.dense.end());
    tape->dense_offset = in.dense_offset;
    tape->h_prev.assign(h_prev.begin(), h_prev.end());
    tape->z = std::move(z);
    tape->r = std::move(r);
    tape->hc = std::move(hc);
  }
  return h_new;
}

/// Backward of one row-step. Accumulates parameter gradients into `grads`,
/// writes the gradient w.r.t. h_prev into `d_hprev` (overwritten) and, when
/// `d_dense` is non-empty, adds the gradient w.r.t. the dense input block.
inline void gru_step_backward(const GruParams& p, const GruStepTape& t, std::span<const double> d_hnew,
                              GruGrads& grads, std::span<double> d_hprev, std::span<double> d_dense = {}) {
  const std::size_t dh = p.hidden_size();
  if (d_hnew.size() != dh || d_hprev.size() != dh) throw ShapeError("gru_step_backward: hidden size mismatch");
  std::vector<double> da_z(dh), da_r(dh), da_h(dh), rh(dh);
  for (std::size_t j = 0; j < dh; ++j) {
    const double z = t.z[j], hc = t.hc[j], hp = t.h_prev[j];
    const double dz = d_hnew[j] * (hc - hp);
    const double dhc = d_hnew[j] * z;
    d_hprev[j] = d_hnew[j] * (1.0 - z);
    da_h[j] = dhc * (1.0 - hc * hc);
    da_z[j] = dz * z * (1.0 - z);
    rh[j] = t.r[j] * hp;
  }
  // Candidate path through r * h_prev.
  std::vector<double> d_rh(dh, 0.0);
  accumulate_vec_mat_t(da_h, p.uh, d_rh);
  for (std::size_t j = 0; j < dh; ++j) {
    const double r = t.r[j];
    const double dr = d_rh[j] * t.h_prev[j];
    d_hprev[j] += d_rh[j] * r;
    da_r[j] = dr * r * (1.0 - r);
  }
  accumulate_vec_mat_t(da_z, p.uz, d_hprev);
  accumulate_vec_mat_t(da_r, p.ur, d_hprev);

  accumulate_outer(t.h_prev, da_z, grads.uz);
  accumulate_outer(t.h_prev, da_r, grads.ur);
  accumulate_outer(rh, da_h, grads.uh);
  for (std::size_t j = 0; j < dh; ++j) {
    grads.bz(0, j) += da_z[j];
    grads.br(0, j) += da_r[j];
    grads.bh(0, j) += da_h[j];
  }

  auto input_grad = [&](Matrix& g, const std::vector<double>& da) {
    if (t.item >= 0) {
      auto row = g.row(static_cast<std::size_t>(t.item));
      for (std::size_t j = 0; j < dh; ++j) row[j] += da[j];
    }
    for (std::size_t k = 0; k < t.dense.size(); ++k) {
      const double v = t.dense[k];
      if (v == 0.0) continue;
      auto row = g.row(t.dense_offset + k);
      for (std::size_t j = 0; j < dh; ++j) row[j] += v * da[j];
    }
  };
  input_grad(grads.wz, da_z);
  input_grad(grads.wr, da_r);
  input_grad(grads.wh, da_h);

  if (!d_dense.empty()) {
    if (d_dense.size() != t.dense.size()) throw ShapeError("gru_step_backward: dense gradient size mismatch");
    for (std::size_t k = 0; k < d_dense.size(); ++k) {
      const std::size_t row = t.dense_offset + k;
      d_dense[k] += dot(da_z, p.wz.row(row)) + dot(da_r, p.wr.row(row)) + dot(da_h, p.wh.row(row));
    }
  }
}

// Batch interface: one row per mini-batch lane, dense inputs.

struct GruTape {
  std::vector<GruStepTape> rows;
};

inline std::pair<Matrix, GruTape> gru_forward(const GruParams& p, const Matrix& x, const Matrix& h_prev) {
  if (x.cols() != p.input_size() || h_prev.cols() != p.hidden_size() || x.rows() != h_prev.rows())
    throw ShapeError("gru_forward: shape mismatch");
  Matrix h_new(x.rows(), p.hidden_size());
  GruTape tape;
  tape.rows.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto h = gru_step(p, GruInput{-1, x.row(i), 0}, h_prev.row(i), &tape.rows[i]);
    std::copy(h.begin(), h.end(), h_new.row(i).begin());
  }
  return {std::move(h_new), std::move(tape)};
}

struct GruBackwardResult {
  Matrix d_x;
  Matrix d_hprev;
};

/// Accumulates into `grads` (so several unrolled steps can share it).
inline GruBackwardResult gru_backward(const GruParams& p, const GruTape& tape, const Matrix& d_hnew,
                                      GruGrads& grads) {
  if (d_hnew.rows() != tape.rows.size() || d_hnew.cols() != p.hidden_size())
    throw ShapeError("gru_backward: shape mismatch");
  GruBackwardResult out{Matrix(d_hnew.rows(), p.input_size()), Matrix(d_hnew.rows(), p.hidden_size())};
  for (std::size_t i = 0; i < tape.rows.size(); ++i)
    gru_step_backward(p, tape.rows[i], d_hnew.row(i), grads, out.d_hprev.row(i), out.d_x.row(i));
  return out;
}

}  // namespace sessrec
