// SPDX-License-Identifier: Apache-2.0
//
// Ranking losses over one positive score and N_S sampled negative scores.
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sessrec/tensor.hpp"

namespace sessrec {

enum class LossKind { kTop1, kBpr, kXent };

inline LossKind parse_loss(std::string_view s) {
  if (s == "top1") return LossKind::kTop1;
  if (s == "bpr") return LossKind::kBpr;
  if (s == "xent") return LossKind::kXent;
  throw std::invalid_argument("unknown loss '" + std::string(s) + "' (expected top1|bpr|xent)");
}

inline std::string_view loss_name(LossKind k) {
  switch (k) {
    case LossKind::kTop1: return "top1";
    case LossKind::kBpr: return "bpr";
    case LossKind::kXent: return "xent";
  }
  return "?";
}

struct LossResult {
  double loss = 0.0;
  double d_positive = 0.0;
  std::vector<double> d_negatives;
};

/// TOP1: (1/N) sum_j sigmoid(r_j - r_i) + sigmoid(r_j^2)
inline LossResult top1_loss(double positive, std::span<const double> negatives) {
  if (negatives.empty()) throw std::invalid_argument("top1_loss: no negatives");
  const double inv_n = 1.0 / static_cast<double>(negatives.size());
  LossResult out;
  out.d_negatives.resize(negatives.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    const double rj = negatives[j];
    const double s_rank = sigmoid(rj - positive);
    const double s_reg = sigmoid(rj * rj);
    out.loss += s_rank + s_reg;
    const double d_rank = s_rank * (1.0 - s_rank);
    out.d_negatives[j] = inv_n * (d_rank + s_reg * (1.0 - s_reg) * 2.0 * rj);
    out.d_positive -= inv_n * d_rank;
  }
  out.loss *= inv_n;
  return out;
}

/// Ranking part of TOP1 alone (no score regularizer).
inline double top1_rank_term(double positive, std::span<const double> negatives) {
  double s = 0.0;
  for (double rj : negatives) s += sigmoid(rj - positive);
  return s / static_cast<double>(negatives.size());
}

/// -ln sigmoid(x), stable for large |x|.
inline double neg_log_sigmoid(double x) {
  return x >= 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

/// BPR: -(1/N) sum_j ln sigmoid(r_i - r_j)
inline LossResult bpr_loss(double positive, std::span<const double> negatives) {
  if (negatives.empty()) throw std::invalid_argument("bpr_loss: no negatives");
  const double inv_n = 1.0 / static_cast<double>(negatives.size());
  LossResult out;
  out.d_negatives.resize(negatives.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    const double diff = positive - negatives[j];
    out.loss += neg_log_sigmoid(diff);
    const double g = sigmoid(-diff);  // -d/d(diff) of ln sigmoid(diff)
    out.d_negatives[j] = inv_n * g;
    out.d_positive -= inv_n * g;
  }
  out.loss *= inv_n;
  return out;
}

struct XentResult {
  double loss = 0.0;
  std::vector<double> d_scores;
};

/// Softmax cross-entropy over a sampled score set; -ln p(positive).
inline XentResult xent_loss(std::span<const double> scores, std::size_t positive_index) {
  if (scores.size() < 2) throw std::invalid_argument("xent_loss: need at least two scores");
  if (positive_index >= scores.size()) throw std::invalid_argument("xent_loss: positive index out of range");
  std::vector<double> p(scores.begin(), scores.end());
  softmax_inplace(p);
  const double mx = *std::max_element(scores.begin(), scores.end());
  double lse = 0.0;
  for (double s : scores) lse += std::exp(s - mx);
  XentResult out;
  out.loss = -(scores[positive_index] - mx - std::log(lse));
  out.d_scores = std::move(p);
  out.d_scores[positive_index] -= 1.0;
  return out;
}

}  // namespace sessrec
