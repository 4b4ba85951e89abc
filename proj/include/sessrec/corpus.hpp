// SPDX-License-Identifier: Apache-2.0
//
// Interaction-log ingestion, sessionization, filtering and the
// last-session train/test split.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sessrec {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawEvent {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
  std::string interaction_type;
};

struct EventFormat {
  char delimiter = '\t';
  bool header = false;
};

struct LoadResult {
  std::vector<RawEvent> events;
  std::size_t malformed = 0;
  std::vector<std::size_t> malformed_lines;
};

namespace detail {
inline std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

template <class Int>
bool parse_int(std::string_view s, Int& out) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && p == end;
}
}  // namespace detail

/// Parses `user, item, timestamp, type` lines. Lines with the wrong column
/// count or an empty field are counted as malformed and skipped; a
/// non-numeric or negative timestamp is a hard error naming the line.
inline LoadResult parse_events(std::istream& in, const EventFormat& fmt = {}) {
  LoadResult out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && fmt.header) continue;
    if (line.empty()) continue;
    const auto f = detail::split_fields(line, fmt.delimiter);
    if (f.size() != 4 || f[0].empty() || f[1].empty() || f[2].empty() || f[3].empty()) {
      ++out.malformed;
      out.malformed_lines.push_back(lineno);
      continue;
    }
    std::int64_t ts = 0;
    if (!detail::parse_int(f[2], ts) || ts < 0)
      throw DataError("line " + std::to_string(lineno) + ": unparseable timestamp '" + std::string(f[2]) + "'");
    out.events.push_back(RawEvent{std::string(f[0]), std::string(f[1]), ts, std::string(f[3])});
  }
  return out;
}

inline LoadResult load_events(const std::filesystem::path& path, const EventFormat& fmt = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open events file: " + path.string());
  return parse_events(in, fmt);
}

/// Bidirectional string id <-> dense index map.
class Vocabulary {
 public:
  std::size_t intern(const std::string& id) {
    auto [it, inserted] = index_.try_emplace(id, ids_.size());
    if (inserted) ids_.push_back(id);
    return it->second;
  }
  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& id(std::size_t index) const { return ids_.at(index); }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  /// FNV-1a over the ordered ids; used to detect vocabulary mismatches.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](unsigned char c) {
      h ^= c;
      h *= 1099511628211ULL;
    };
    for (const auto& s : ids_) {
      for (char c : s) mix(static_cast<unsigned char>(c));
      mix(0);
    }
    return h;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.ids_ == b.ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Session {
  std::vector<std::size_t> items;
  std::vector<std::int64_t> timestamps;

  std::size_t size() const { return items.size(); }
  friend bool operator==(const Session&, const Session&) = default;
};

struct UserHistory {
  std::size_t user_index = 0;
  std::vector<Session> sessions;

  std::size_t event_count() const {
    std::size_t n = 0;
    for (const auto& s : sessions) n += s.size();
    return n;
  }
  friend bool operator==(const UserHistory&, const UserHistory&) = default;
};

struct Corpus {
  std::vector<UserHistory> users;
  Vocabulary item_vocab;
  Vocabulary user_vocab;
  std::map<std::string, std::string> metadata;

  std::size_t n_items() const { return item_vocab.size(); }

  std::size_t session_count() const {
    std::size_t n = 0;
    for (const auto& u : users) n += u.sessions.size();
    return n;
  }
  std::size_t event_count() const {
    std::size_t n = 0;
    for (const auto& u : users) n += u.event_count();
    return n;
  }

  /// Throws DataError when an item index is out of range or timestamps decrease.
  void validate() const {
    for (const auto& u : users) {
      if (u.user_index >= user_vocab.size() && user_vocab.size() > 0)
        throw DataError("user index out of range");
      for (const auto& s : u.sessions) {
        if (s.items.size() != s.timestamps.size()) throw DataError("session items/timestamps length mismatch");
        for (auto it : s.items)
          if (it >= n_items()) throw DataError("item index " + std::to_string(it) + " >= n_items");
        if (!std::is_sorted(s.timestamps.begin(), s.timestamps.end()))
          throw DataError("session timestamps decrease");
      }
    }
  }
};

struct SplitSpec {
  std::int64_t idle_threshold_s = 1800;
  std::size_t min_item_support = 0;
  std::size_t min_session_len = 3;
  std::size_t min_user_sessions = 5;
  std::set<std::string> dropped_types;
  bool dedup_same_type_in_session = false;
};

/// Users and items interned in first-appearance order.
struct SessionLog {
  std::vector<UserHistory> users;
  Vocabulary items;
  Vocabulary user_ids;
};

/// Groups events per user, stable-sorts them by time and cuts a new session
/// whenever the gap to the previous kept event is >= the idle threshold.
inline SessionLog sessionize(const std::vector<RawEvent>& events, const SplitSpec& spec) {
  SessionLog log;
  struct Ev {
    std::size_t item;
    std::int64_t ts;
    std::size_t type;
  };
  std::vector<std::vector<Ev>> per_user;
  Vocabulary types;
  for (const auto& e : events) {
    if (spec.dropped_types.count(e.interaction_type)) continue;
    const auto u = log.user_ids.intern(e.user_id);
    if (u == per_user.size()) per_user.emplace_back();
    per_user[u].push_back(Ev{log.items.intern(e.item_id), e.timestamp, types.intern(e.interaction_type)});
  }
  log.users.reserve(per_user.size());
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    auto& evs = per_user[u];
    std::stable_sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) { return a.ts < b.ts; });
    UserHistory h;
    h.user_index = u;
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t i = 0; i < evs.size(); ++i) {
      if (i == 0 || evs[i].ts - evs[i - 1].ts >= spec.idle_threshold_s) {
        h.sessions.emplace_back();
        seen.clear();
      }
      if (spec.dedup_same_type_in_session && !seen.emplace(evs[i].item, evs[i].type).second) continue;
      h.sessions.back().items.push_back(evs[i].item);
      h.sessions.back().timestamps.push_back(evs[i].ts);
    }
    log.users.push_back(std::move(h));
  }
  return log;
}

/// Single pass: item support -> session length -> user session count.
inline std::vector<UserHistory> filter_corpus(std::vector<UserHistory> histories, const SplitSpec& spec) {
  std::unordered_map<std::size_t, std::size_t> support;
  for (const auto& u : histories)
    for (const auto& s : u.sessions)
      for (auto it : s.items) ++support[it];

  std::vector<UserHistory> out;
  for (auto& u : histories) {
    UserHistory kept{u.user_index, {}};
    for (auto& s : u.sessions) {
      Session ns;
      for (std::size_t i = 0; i < s.items.size(); ++i) {
        if (support[s.items[i]] < spec.min_item_support) continue;
        ns.items.push_back(s.items[i]);
        ns.timestamps.push_back(s.timestamps[i]);
      }
      if (ns.size() >= spec.min_session_len && !ns.items.empty()) kept.sessions.push_back(std::move(ns));
    }
    if (kept.sessions.size() >= spec.min_user_sessions && !kept.sessions.empty()) out.push_back(std::move(kept));
  }
  return out;
}

struct SplitResult {
  Corpus train;
  Corpus test;
};

/// Last session of every user -> test, the rest -> train. Users are
/// renumbered densely (shared by both halves), the item vocabulary is
/// built from train only, and test events on unseen items are removed;
/// test sessions left with fewer than 2 events are dropped.
inline SplitResult split_last_session(const std::vector<UserHistory>& histories, const Vocabulary& items,
                                      const Vocabulary& user_ids) {
  SplitResult out;
  for (const auto& u : histories) {
    if (u.sessions.size() < 2)
      throw DataError("split_last_session: user " + (u.user_index < user_ids.size() ? user_ids.id(u.user_index)
                                                                                      : std::to_string(u.user_index)) +
                      " has fewer than 2 sessions");
  }
  for (const auto& u : histories) {
    const std::size_t new_user = out.train.user_vocab.intern(
        u.user_index < user_ids.size() ? user_ids.id(u.user_index) : std::to_string(u.user_index));
    UserHistory tr{new_user, {}};
    for (std::size_t m = 0; m + 1 < u.sessions.size(); ++m) {
      Session s = u.sessions[m];
      for (auto& it : s.items) it = out.train.item_vocab.intern(items.id(it));
      tr.sessions.push_back(std::move(s));
    }
    out.train.users.push_back(std::move(tr));
  }
  out.test.item_vocab = out.train.item_vocab;
  out.test.user_vocab = out.train.user_vocab;
  for (std::size_t k = 0; k < histories.size(); ++k) {
    const auto& last = histories[k].sessions.back();
    Session s;
    for (std::size_t i = 0; i < last.size(); ++i) {
      auto idx = out.train.item_vocab.find(items.id(last.items[i]));
      if (!idx) continue;
      s.items.push_back(*idx);
      s.timestamps.push_back(last.timestamps[i]);
    }
    if (s.size() < 2) continue;
    out.test.users.push_back(UserHistory{out.train.users[k].user_index, {std::move(s)}});
  }
  return out;
}

inline SplitResult split_last_session(const Corpus& c) {
  auto r = split_last_session(c.users, c.item_vocab, c.user_vocab);
  r.train.metadata = c.metadata;
  r.test.metadata = c.metadata;
  return r;
}

struct Moments {
  double median = 0.0;
  double mean = 0.0;
  double std = 0.0;
};

inline Moments moments(std::vector<double> v) {
  Moments m;
  if (v.empty()) return m;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  m.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(n));
  return m;
}

struct CorpusStats {
  std::size_t users = 0, items = 0, sessions = 0, events = 0;
  Moments events_per_item, events_per_session, sessions_per_user;
};

/// Population standard deviation; `items` counts distinct items that occur.
inline CorpusStats corpus_stats(const Corpus& c) {
  CorpusStats st;
  std::map<std::size_t, double> per_item;
  std::vector<double> per_session, per_user;
  for (const auto& u : c.users) {
    if (u.sessions.empty()) continue;
    ++st.users;
    per_user.push_back(static_cast<double>(u.sessions.size()));
    for (const auto& s : u.sessions) {
      ++st.sessions;
      st.events += s.size();
      per_session.push_back(static_cast<double>(s.size()));
      for (auto it : s.items) per_item[it] += 1.0;
    }
  }
  st.items = per_item.size();
  std::vector<double> pi;
  pi.reserve(per_item.size());
  for (const auto& [k, v] : per_item) pi.push_back(v);
  st.events_per_item = moments(std::move(pi));
  st.events_per_session = moments(std::move(per_session));
  st.sessions_per_user = moments(std::move(per_user));
  return st;
}

inline std::string format_stats(const CorpusStats& st) {
  std::ostringstream os;
  auto mom = [&](const char* name, const Moments& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s\t%.6g/%.6g/%.6g\n", name, m.median, m.mean, m.std);
    os << buf;
  };
  os << "users\t" << st.users << "\nitems\t" << st.items << "\nsessions\t" << st.sessions << "\nevents\t"
     << st.events << "\n";
  mom("events_per_item(median/mean/std)", st.events_per_item);
  mom("events_per_session(median/mean/std)", st.events_per_session);
  mom("sessions_per_user(median/mean/std)", st.sessions_per_user);
  return os.str();
}

// Corpus files: `<stem>.corpus` (magic header, `#key<TAB>value` metadata,
// then `user<TAB>session<TAB>item<TAB>timestamp` rows), `<stem>.vocab.tsv`
// (`item_index<TAB>item_id`) and `<stem>.users.tsv`.

inline constexpr std::string_view kCorpusMagic = "SESSREC-CORPUS-v1";

inline void write_corpus(const Corpus& c, const std::filesystem::path& stem) {
  const auto base = stem.string();
  {
    std::ofstream os(base + ".corpus", std::ios::binary);
    if (!os) throw IoError("cannot write " + base + ".corpus");
    os << kCorpusMagic << "\n";
    auto meta = c.metadata;
    meta["n_items"] = std::to_string(c.n_items());
    meta["n_users"] = std::to_string(c.user_vocab.size());
    for (const auto& [k, v] : meta) os << "#" << k << "\t" << v << "\n";
    os << "user\tsession\titem\ttimestamp\n";
    for (const auto& u : c.users)
      for (std::size_t m = 0; m < u.sessions.size(); ++m)
        for (std::size_t i = 0; i < u.sessions[m].size(); ++i)
          os << u.user_index << "\t" << m << "\t" << u.sessions[m].items[i] << "\t" << u.sessions[m].timestamps[i]
             << "\n";
    if (!os) throw IoError("write failed: " + base + ".corpus");
  }
  auto write_vocab = [](const Vocabulary& v, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    for (std::size_t i = 0; i < v.size(); ++i) os << i << "\t" << v.id(i) << "\n";
  };
  write_vocab(c.item_vocab, base + ".vocab.tsv");
  write_vocab(c.user_vocab, base + ".users.tsv");
}

inline Corpus read_corpus(const std::filesystem::path& stem) {
  const auto base = stem.string();
  Corpus c;
  auto read_vocab = [](Vocabulary& v, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::string line;
    std::size_t expect = 0;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      std::size_t idx = 0;
      if (tab == std::string::npos || !detail::parse_int(std::string_view(line).substr(0, tab), idx) ||
          idx != expect)
        throw DataError("bad vocabulary line in " + path + ": " + line);
      v.intern(line.substr(tab + 1));
      ++expect;
    }
  };
  read_vocab(c.item_vocab, base + ".vocab.tsv");
  read_vocab(c.user_vocab, base + ".users.tsv");

  std::ifstream is(base + ".corpus");
  if (!is) throw IoError("cannot open " + base + ".corpus");
  std::string line;
  if (!std::getline(is, line) || line != kCorpusMagic)
    throw DataError(base + ".corpus: missing " + std::string(kCorpusMagic) + " header");
  std::size_t lineno = 1;
  std::map<std::size_t, std::size_t> user_pos;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto tab = line.find('\t');
      if (tab != std::string::npos) c.metadata[line.substr(1, tab - 1)] = line.substr(tab + 1);
      continue;
    }
    if (line.rfind("user\t", 0) == 0) continue;
    const auto f = detail::split_fields(line, '\t');
    std::size_t u = 0, m = 0, item = 0;
    std::int64_t ts = 0;
    if (f.size() != 4 || !detail::parse_int(f[0], u) || !detail::parse_int(f[1], m) ||
        !detail::parse_int(f[2], item) || !detail::parse_int(f[3], ts))
      throw DataError(base + ".corpus line " + std::to_string(lineno) + ": malformed row");
    auto [it, inserted] = user_pos.try_emplace(u, c.users.size());
    if (inserted) c.users.push_back(UserHistory{u, {}});
    auto& uh = c.users[it->second];
    if (m == uh.sessions.size()) uh.sessions.emplace_back();
    if (m + 1 != uh.sessions.size())
      throw DataError(base + ".corpus line " + std::to_string(lineno) + ": session index out of order");
    uh.sessions.back().items.push_back(item);
    uh.sessions.back().timestamps.push_back(ts);
  }
  c.metadata.erase("n_items");
  c.metadata.erase("n_users");
  c.validate();
  return c;
}

}  // namespace sessrec
