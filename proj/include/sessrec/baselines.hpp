// SPDX-License-Identifier: Apache-2.0
//
// Non-hierarchical comparison systems: personal popularity, item-to-item
// KNN over session co-occurrence, and the session-concatenation transform.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sessrec/corpus.hpp"
#include "sessrec/tensor.hpp"

namespace sessrec {

// ---------------------------------------------------------------- PPOP

struct PopModel {
  std::size_t n_items = 0;
  std::vector<std::size_t> global;                                      // per item
  std::unordered_map<std::size_t, std::vector<std::size_t>> per_user;  // user index -> counts
};

inline PopModel fit_ppop(const Corpus& train) {
  PopModel m;
  m.n_items = train.n_items();
  m.global.assign(m.n_items, 0);
  for (const auto& u : train.users) {
    auto& counts = m.per_user[u.user_index];
    counts.assign(m.n_items, 0);
    for (const auto& s : u.sessions)
      for (auto it : s.items) {
        ++counts[it];
        ++m.global[it];
      }
  }
  return m;
}

/// Scores encode (user count, global count, lower index) lexicographically
/// so that every item gets a distinct score. `context` holds the events of
/// the current session seen so far and counts as user interactions.
inline std::vector<double> score_ppop(const PopModel& m, std::size_t user, std::span<const std::size_t> context = {}) {
  const double n = static_cast<double>(m.n_items);
  double g_max = 0.0;
  for (auto g : m.global) g_max = std::max(g_max, static_cast<double>(g));
  const double g_span = (g_max + 1.0) * n;
  std::vector<double> counts(m.n_items, 0.0);
  if (auto it = m.per_user.find(user); it != m.per_user.end())
    for (std::size_t k = 0; k < m.n_items; ++k) counts[k] = static_cast<double>(it->second[k]);
  for (auto item : context)
    if (item < m.n_items) counts[item] += 1.0;
  std::vector<double> scores(m.n_items);
  for (std::size_t k = 0; k < m.n_items; ++k)
    scores[k] = counts[k] * g_span + static_cast<double>(m.global[k]) * n + (n - 1.0 - static_cast<double>(k));
  return scores;
}

// ---------------------------------------------------------------- Item-KNN

struct KnnModel {
  std::size_t n_items = 0;
  std::size_t k = 300;
  std::vector<std::vector<std::pair<std::size_t, double>>> neighbors;  // sorted by similarity desc, index asc
};

/// sim(a, b) = cooc(a, b) / sqrt(supp(a) supp(b)), counted over sessions
/// (each session contributes at most once per item or pair).
inline KnnModel fit_item_knn(const Corpus& train, std::size_t k = 300) {
  if (k < 1) throw std::invalid_argument("neighborhood size must be >= 1");
  KnnModel m;
  m.n_items = train.n_items();
  m.k = k;
  std::vector<double> support(m.n_items, 0.0);
  std::vector<std::unordered_map<std::size_t, double>> cooc(m.n_items);
  std::vector<std::size_t> distinct;
  for (const auto& u : train.users)
    for (const auto& s : u.sessions) {
      distinct.assign(s.items.begin(), s.items.end());
      std::sort(distinct.begin(), distinct.end());
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      for (std::size_t i = 0; i < distinct.size(); ++i) {
        support[distinct[i]] += 1.0;
        for (std::size_t j = i + 1; j < distinct.size(); ++j) {
          cooc[distinct[i]][distinct[j]] += 1.0;
          cooc[distinct[j]][distinct[i]] += 1.0;
        }
      }
    }
  m.neighbors.resize(m.n_items);
  for (std::size_t a = 0; a < m.n_items; ++a) {
    auto& list = m.neighbors[a];
    for (const auto& [b, c] : cooc[a]) list.emplace_back(b, c / std::sqrt(support[a] * support[b]));
    std::sort(list.begin(), list.end(), [](const auto& x, const auto& y) {
      return x.second != y.second ? x.second > y.second : x.first < y.first;
    });
    if (list.size() > k) list.resize(k);
  }
  return m;
}

inline double knn_similarity(const KnnModel& m, std::size_t a, std::size_t b) {
  for (const auto& [n, s] : m.neighbors.at(a))
    if (n == b) return s;
  return 0.0;
}

/// Neighbor similarities of the last clicked item; everything else 0.
inline std::vector<double> score_item_knn(const KnnModel& m, std::size_t current_item) {
  std::vector<double> scores(m.n_items, 0.0);
  if (current_item >= m.n_items) return scores;
  for (const auto& [n, s] : m.neighbors[current_item]) scores[n] = s;
  return scores;
}

/// Writes `item \t neighbor \t similarity` triples using item ids.
inline void write_knn(const std::string& path, const KnnModel& m, const Vocabulary& items) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  char buf[64];
  for (std::size_t a = 0; a < m.n_items; ++a)
    for (const auto& [b, s] : m.neighbors[a]) {
      std::snprintf(buf, sizeof buf, "%.17g", s);
      os << items.id(a) << '\t' << items.id(b) << '\t' << buf << '\n';
    }
}

inline KnnModel read_knn(const std::string& path, const Vocabulary& items, std::size_t k = 300) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  KnnModel m;
  m.n_items = items.size();
  m.k = k;
  m.neighbors.resize(m.n_items);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto f = detail::split_fields(line, '\t');
    const auto a = f.size() == 3 ? items.find(std::string(f[0])) : std::nullopt;
    const auto b = f.size() == 3 ? items.find(std::string(f[1])) : std::nullopt;
    if (!a || !b) throw DataError(path + ":" + std::to_string(lineno) + ": bad neighbor triple");
    m.neighbors[*a].emplace_back(*b, std::stod(std::string(f[2])));
  }
  return m;
}

// ---------------------------------------------------------------- concat

/// Merges every user's sessions, in order, into a single session.
inline Corpus concat_sessions(const Corpus& corpus) {
  Corpus out;
  out.item_vocab = corpus.item_vocab;
  out.user_vocab = corpus.user_vocab;
  out.metadata = corpus.metadata;
  for (const auto& u : corpus.users) {
    Session merged;
    for (const auto& s : u.sessions) {
      merged.items.insert(merged.items.end(), s.items.begin(), s.items.end());
      merged.timestamps.insert(merged.timestamps.end(), s.timestamps.begin(), s.timestamps.end());
    }
    UserHistory h{u.user_index, {}};
    if (!merged.items.empty()) h.sessions.push_back(std::move(merged));
    out.users.push_back(std::move(h));
  }
  return out;
}

}  // namespace sessrec
