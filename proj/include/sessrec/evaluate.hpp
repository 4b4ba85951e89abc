// SPDX-License-Identifier: Apache-2.0
//
// Sequential next-item evaluation: history bootstrapping, Recall/MRR/
// Precision@N, and the history-length / within-session breakdowns.
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sessrec/corpus.hpp"

namespace sessrec {

/// 1 + number of other items scoring >= the target (ties count against it).
inline std::size_t rank_of_target(std::span<const double> scores, std::size_t target,
                                  std::span<const char> candidates = {}) {
  if (target >= scores.size()) throw std::out_of_range("rank_of_target: target out of range");
  const double st = scores[target];
  std::size_t rank = 1;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (k == target) continue;
    if (!candidates.empty() && !candidates[k]) continue;
    if (scores[k] >= st) ++rank;
  }
  return rank;
}

/// Stateful next-item scorer driven by the evaluation loop.
class SequentialScorer {
 public:
  virtual ~SequentialScorer() = default;
  virtual std::size_t n_items() const = 0;
  /// True when the scorer must replay the user's earlier sessions.
  virtual bool needs_history() const { return false; }
  /// Called before each test session; `history` is null for unknown users.
  virtual void begin_user(std::size_t user, const UserHistory* history) = 0;
  virtual void begin_session() = 0;
  /// Scores for the session's first event, if the model can produce them.
  virtual bool score_first(std::vector<double>& /*out*/) { return false; }
  /// Consumes `item` and writes scores for the next event.
  virtual void observe(std::size_t item, std::vector<double>& out) = 0;
};

enum class PositionKey { kTarget, kPrefix };

struct EvalConfig {
  std::size_t cutoff = 5;
  bool skip_first_prediction = false;
  std::size_t top_m = 0;  // 0: rank against the full catalog
  PositionKey position_key = PositionKey::kTarget;
  std::size_t history_boundary = 6;  // Short: <= boundary sessions
};

/// One ranked target event.
struct TargetRecord {
  std::size_t session = 0;   // index of the test session in the evaluation run
  std::size_t user = 0;
  std::size_t position = 0;  // 1-based position of the target event in its session
  std::size_t session_length = 0;
  std::size_t history_sessions = 0;
  std::size_t rank = 0;
};

struct EvalRun {
  std::vector<TargetRecord> records;
  std::size_t sessions = 0;
  std::size_t skipped_users = 0;
};

struct MetricsReport {
  std::size_t cutoff = 5;
  std::size_t targets = 0;
  std::size_t sessions = 0;
  double recall = 0.0;
  double mrr = 0.0;
  double precision = 0.0;
};

struct GroupedReport {
  std::vector<std::pair<std::string, MetricsReport>> groups;  // empty groups omitted

  const MetricsReport* find(const std::string& name) const {
    for (const auto& [k, v] : groups)
      if (k == name) return &v;
    return nullptr;
  }
};

/// Item indices of the `m` most supported training items.
inline std::vector<char> top_supported_items(const Corpus& train, std::size_t m) {
  std::vector<std::size_t> support(train.n_items(), 0);
  for (const auto& u : train.users)
    for (const auto& s : u.sessions)
      for (auto it : s.items) ++support[it];
  std::vector<std::size_t> order(support.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return support[a] > support[b]; });
  std::vector<char> mask(support.size(), 0);
  for (std::size_t i = 0; i < std::min(m, order.size()); ++i) mask[order[i]] = 1;
  return mask;
}

/// Runs the scorer over every test session. Within a session events
/// 1..n-1 are fed in order and each next event is ranked; a scorer that can
/// predict the first event (concatenated sessions) contributes that extra
/// target unless `skip_first_prediction` is set.
inline EvalRun evaluate_model(SequentialScorer& scorer, const Corpus& test, const Corpus& history,
                              const EvalConfig& cfg, std::span<const char> candidates = {}) {
  if (cfg.cutoff < 1) throw std::invalid_argument("cutoff must be >= 1");
  std::unordered_map<std::size_t, const UserHistory*> by_user;
  for (const auto& u : history.users) by_user[u.user_index] = &u;
  EvalRun run;
  std::vector<double> scores;
  for (const auto& u : test.users) {
    auto it = by_user.find(u.user_index);
    const UserHistory* hist = it == by_user.end() ? nullptr : it->second;
    if (!hist && scorer.needs_history()) {
      ++run.skipped_users;
      continue;
    }
    scorer.begin_user(u.user_index, hist);
    const std::size_t hist_len = hist ? hist->sessions.size() : 0;
    for (const auto& s : u.sessions) {
      if (s.size() < 2) continue;
      scorer.begin_session();
      const std::size_t sid = run.sessions++;
      auto record = [&](std::size_t pos, std::size_t target) {
        run.records.push_back(
            TargetRecord{sid, u.user_index, pos, s.size(), hist_len, rank_of_target(scores, target, candidates)});
      };
      if (scorer.score_first(scores) && !cfg.skip_first_prediction) record(1, s.items[0]);
      for (std::size_t n = 0; n + 1 < s.size(); ++n) {
        scorer.observe(s.items[n], scores);
        record(n + 2, s.items[n + 1]);
      }
    }
  }
  return run;
}

namespace detail {
inline MetricsReport finish(MetricsReport r, double recall_sum, double mrr_sum, std::size_t denom) {
  if (denom > 0) {
    r.recall = recall_sum / static_cast<double>(denom);
    r.mrr = mrr_sum / static_cast<double>(denom);
  }
  r.precision = r.recall / static_cast<double>(r.cutoff);
  return r;
}
}  // namespace detail

/// Per-target averages (headline numbers). Reciprocal rank is 0 beyond the cutoff.
inline MetricsReport summarize(std::span<const TargetRecord> records, std::size_t cutoff) {
  MetricsReport r;
  r.cutoff = cutoff;
  double hits = 0.0, rr = 0.0;
  std::vector<std::size_t> sessions;
  for (const auto& t : records) {
    if (t.rank <= cutoff) {
      hits += 1.0;
      rr += 1.0 / static_cast<double>(t.rank);
    }
    sessions.push_back(t.session);
  }
  std::sort(sessions.begin(), sessions.end());
  r.sessions = static_cast<std::size_t>(std::unique(sessions.begin(), sessions.end()) - sessions.begin());
  r.targets = records.size();
  return detail::finish(r, hits, rr, records.size());
}

/// Per-session averages: each session's mean over its targets, then the
/// mean over sessions.
inline MetricsReport summarize_per_session(std::span<const TargetRecord> records, std::size_t cutoff) {
  std::map<std::size_t, std::pair<std::vector<const TargetRecord*>, int>> by_session;
  for (const auto& t : records) by_session[t.session].first.push_back(&t);
  MetricsReport r;
  r.cutoff = cutoff;
  double recall_sum = 0.0, mrr_sum = 0.0;
  for (const auto& [sid, v] : by_session) {
    double hits = 0.0, rr = 0.0;
    for (const auto* t : v.first)
      if (t->rank <= cutoff) {
        hits += 1.0;
        rr += 1.0 / static_cast<double>(t->rank);
      }
    recall_sum += hits / static_cast<double>(v.first.size());
    mrr_sum += rr / static_cast<double>(v.first.size());
  }
  r.sessions = by_session.size();
  r.targets = records.size();
  return detail::finish(r, recall_sum, mrr_sum, by_session.size());
}

/// Short (<= boundary earlier sessions) vs Long (> boundary).
inline GroupedReport breakdown_by_history_length(const EvalRun& run, std::size_t cutoff, std::size_t boundary = 6) {
  std::vector<TargetRecord> shorter, longer;
  for (const auto& t : run.records) (t.history_sessions <= boundary ? shorter : longer).push_back(t);
  GroupedReport g;
  if (!shorter.empty()) g.groups.emplace_back("short", summarize_per_session(shorter, cutoff));
  if (!longer.empty()) g.groups.emplace_back("long", summarize_per_session(longer, cutoff));
  return g;
}

/// Group of a target at 1-based `position`: positions 1-2 beginning, 3-4
/// middle, later end. With PositionKey::kPrefix the group is taken from the
/// number of events already seen (position - 1).
inline const char* position_group(std::size_t position, PositionKey key) {
  const std::size_t p = key == PositionKey::kTarget ? position : position - 1;
  if (p <= 2) return "beginning";
  if (p <= 4) return "middle";
  return "end";
}

/// Restricted to sessions with at least 5 events.
inline GroupedReport breakdown_by_position(const EvalRun& run, std::size_t cutoff,
                                           PositionKey key = PositionKey::kTarget) {
  std::map<std::string, std::vector<TargetRecord>> groups;
  for (const auto& t : run.records) {
    if (t.session_length < 5) continue;
    groups[position_group(t.position, key)].push_back(t);
  }
  GroupedReport g;
  for (const char* name : {"beginning", "middle", "end"}) {
    auto it = groups.find(name);
    if (it != groups.end() && !it->second.empty()) g.groups.emplace_back(name, summarize_per_session(it->second, cutoff));
  }
  return g;
}

struct EvalSummary {
  MetricsReport headline;
  GroupedReport history;
  GroupedReport position;
  std::size_t skipped_users = 0;
};

inline EvalSummary summarize_run(const EvalRun& run, const EvalConfig& cfg) {
  return EvalSummary{summarize(run.records, cfg.cutoff), breakdown_by_history_length(run, cfg.cutoff, cfg.history_boundary),
                     breakdown_by_position(run, cfg.cutoff, cfg.position_key), run.skipped_users};
}

// Report rows: model, metric, cutoff, group, value, seed_count.

struct ReportRow {
  std::string model;
  std::string metric;
  std::size_t cutoff = 5;
  std::string group;
  double value = 0.0;
  std::size_t seed_count = 1;
};

namespace detail {
inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}
}  // namespace detail

/// Headline metrics are the mean over seeds, breakdowns the median. Precision
/// is derived from the aggregated recall so Precision@N = Recall@N / N holds
/// exactly for every row.
inline std::vector<ReportRow> build_report(const std::string& model, const std::vector<EvalSummary>& runs) {
  if (runs.empty()) throw std::invalid_argument("build_report: no runs");
  const std::size_t n = runs.size();
  const std::size_t cutoff = runs.front().headline.cutoff;
  std::vector<ReportRow> rows;
  auto emit = [&](const std::string& group, double recall, double mrr) {
    const std::string at = "@" + std::to_string(cutoff);
    rows.push_back({model, "recall" + at, cutoff, group, recall, n});
    rows.push_back({model, "mrr" + at, cutoff, group, mrr, n});
    rows.push_back({model, "precision" + at, cutoff, group, recall / static_cast<double>(cutoff), n});
  };
  std::vector<double> r, m;
  for (const auto& s : runs) {
    r.push_back(s.headline.recall);
    m.push_back(s.headline.mrr);
  }
  emit("all", detail::mean(r), detail::mean(m));
  auto grouped = [&](const char* prefix, auto member) {
    std::vector<std::string> names;
    for (const auto& s : runs)
      for (const auto& [k, v] : (s.*member).groups)
        if (std::find(names.begin(), names.end(), k) == names.end()) names.push_back(k);
    for (const auto& name : names) {
      std::vector<double> gr, gm;
      for (const auto& s : runs)
        if (const auto* rep = (s.*member).find(name)) {
          gr.push_back(rep->recall);
          gm.push_back(rep->mrr);
        }
      emit(std::string(prefix) + ":" + name, detail::median(gr), detail::median(gm));
    }
  };
  grouped("history", &EvalSummary::history);
  grouped("position", &EvalSummary::position);
  return rows;
}

/// Shortest text that parses back to the same double.
inline std::string format_value(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline void write_report_tsv(std::ostream& os, const std::vector<ReportRow>& rows) {
  os << "model\tmetric\tcutoff\tgroup\tvalue\tseed_count\n";
  for (const auto& r : rows)
    os << r.model << "\t" << r.metric << "\t" << r.cutoff << "\t" << r.group << "\t" << format_value(r.value) << "\t"
       << r.seed_count << "\n";
}

inline void write_report_tsv(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write report " + path);
  write_report_tsv(os, rows);
}

inline void print_report_table(std::ostream& os, const std::vector<ReportRow>& rows) {
  // One line per (model, group) with recall / mrr / precision columns.
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::map<std::string, double>> cells;
  std::size_t cutoff = rows.empty() ? 5 : rows.front().cutoff;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.model, r.group);
    if (!cells.count(key)) keys.push_back(key);
    cells[key][r.metric.substr(0, r.metric.find('@'))] = r.value;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %-20s %10s %10s %12s\n", "model", "group",
                ("Recall@" + std::to_string(cutoff)).c_str(), ("MRR@" + std::to_string(cutoff)).c_str(),
                ("Precision@" + std::to_string(cutoff)).c_str());
  os << buf;
  for (const auto& k : keys) {
    auto& c = cells[k];
    std::snprintf(buf, sizeof buf, "%-12s %-20s %10.4f %10.4f %12.4f\n", k.first.c_str(), k.second.c_str(),
                  c["recall"], c["mrr"], c["precision"]);
    os << buf;
  }
}

}  // namespace sessrec
