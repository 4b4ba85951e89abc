// SPDX-License-Identifier: Apache-2.0
//
// Synthetic corpora for tests, demos and the acceptance checks.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sessrec/corpus.hpp"
#include "sessrec/tensor.hpp"

namespace sessrec {

namespace detail {
inline Corpus empty_corpus(std::size_t n_items, std::size_t n_users) {
  Corpus c;
  for (std::size_t i = 0; i < n_items; ++i) c.item_vocab.intern("i" + std::to_string(i));
  for (std::size_t u = 0; u < n_users; ++u) c.user_vocab.intern("u" + std::to_string(u));
  return c;
}

inline Session make_session(std::vector<std::size_t> items, std::int64_t& clock) {
  Session s;
  s.items = std::move(items);
  for (std::size_t k = 0; k < s.items.size(); ++k) s.timestamps.push_back(clock += 60);
  clock += 86400;
  return s;
}
}  // namespace detail

/// Users belong to archetypes; every archetype owns a disjoint pool of items.
/// A session opens on an item drawn from the whole catalog, then walks the
/// user's pool: with probability `stay` it moves to the pool successor of the
/// previous pool item, otherwise to a uniform pool item.
struct ArchetypeSpec {
  std::size_t users = 200;
  std::size_t items = 40;
  std::size_t pools = 8;
  std::size_t sessions_min = 5;
  std::size_t sessions_max = 8;
  std::size_t length_min = 4;
  std::size_t length_max = 6;
  double stay = 0.8;
  std::uint64_t seed = 7;
};

inline std::size_t archetype_of(std::size_t user, const ArchetypeSpec& spec) { return user % spec.pools; }

inline Corpus archetype_corpus(const ArchetypeSpec& spec) {
  if (spec.pools == 0 || spec.items % spec.pools != 0)
    throw std::invalid_argument("archetype_corpus: items must split evenly into pools");
  Rng rng(spec.seed);
  const std::size_t pool_size = spec.items / spec.pools;
  Corpus c = detail::empty_corpus(spec.items, spec.users);
  std::int64_t clock = 1'000'000;
  for (std::size_t u = 0; u < spec.users; ++u) {
    const std::size_t base = archetype_of(u, spec) * pool_size;
    UserHistory h{u, {}};
    const std::size_t n_sessions = spec.sessions_min + rng.below(spec.sessions_max - spec.sessions_min + 1);
    for (std::size_t m = 0; m < n_sessions; ++m) {
      const std::size_t len = spec.length_min + rng.below(spec.length_max - spec.length_min + 1);
      std::vector<std::size_t> items{rng.below(spec.items)};
      std::size_t at = rng.below(pool_size);
      items.push_back(base + at);
      while (items.size() < len) {
        at = rng.uniform() < spec.stay ? (at + 1) % pool_size : rng.below(pool_size);
        items.push_back(base + at);
      }
      h.sessions.push_back(detail::make_session(std::move(items), clock));
    }
    c.users.push_back(std::move(h));
  }
  return c;
}

/// Item k is always followed by item k+1 (mod n_items); sessions start at
/// uniform items. One session per user.
inline Corpus successor_corpus(std::size_t n_items, std::size_t sessions, std::size_t length, std::uint64_t seed) {
  Rng rng(seed);
  Corpus c = detail::empty_corpus(n_items, sessions);
  std::int64_t clock = 1'000'000;
  for (std::size_t s = 0; s < sessions; ++s) {
    std::vector<std::size_t> items{rng.below(n_items)};
    while (items.size() < length) items.push_back((items.back() + 1) % n_items);
    c.users.push_back(UserHistory{s, {detail::make_session(std::move(items), clock)}});
  }
  return c;
}

/// Uniformly random corpus with ragged users and sessions; session lengths
/// start at 1 so single-event sessions are exercised too.
inline Corpus random_corpus(Rng& rng, std::size_t users, std::size_t items, std::size_t max_sessions,
                            std::size_t max_length) {
  Corpus c = detail::empty_corpus(items, users);
  std::int64_t clock = 1'000'000;
  for (std::size_t u = 0; u < users; ++u) {
    UserHistory h{u, {}};
    const std::size_t n = 1 + rng.below(max_sessions);
    for (std::size_t m = 0; m < n; ++m) {
      std::vector<std::size_t> s(1 + rng.below(max_length));
      for (auto& it : s) it = rng.below(items);
      h.sessions.push_back(detail::make_session(std::move(s), clock));
    }
    c.users.push_back(std::move(h));
  }
  return c;
}

}  // namespace sessrec
