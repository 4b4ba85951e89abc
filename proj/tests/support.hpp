// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the test programs.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sessrec/corpus.hpp"
#include "sessrec/synthetic.hpp"
#include "sessrec/tensor.hpp"

namespace testing {

using Sessions = std::vector<std::vector<std::size_t>>;

/// One entry per user; each user is a list of sessions of item indices.
inline sessrec::Corpus make_corpus(std::size_t n_items, const std::vector<Sessions>& users) {
  sessrec::Corpus c = sessrec::detail::empty_corpus(n_items, users.size());
  std::int64_t clock = 1000;
  for (std::size_t u = 0; u < users.size(); ++u) {
    sessrec::UserHistory h{u, {}};
    for (const auto& s : users[u]) h.sessions.push_back(sessrec::detail::make_session(s, clock));
    c.users.push_back(std::move(h));
  }
  return c;
}

/// Fourth-order central difference of f at x along one coordinate.
inline double central_difference(const std::function<double(double)>& f, double x, double h = 1e-3) {
  return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h);
}

inline double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-5});
}

/// Rank of `target` after sorting by descending score with the target
/// placed after every item it ties with.
inline std::size_t sorted_rank(const std::vector<double>& scores, std::size_t target) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if ((a == target) != (b == target)) return b == target;
    return a < b;
  });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), target) - order.begin()) + 1;
}

}  // namespace testing
