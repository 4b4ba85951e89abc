// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sessrec/evaluate.hpp"
#include "sessrec/scorers.hpp"
#include "support.hpp"

using namespace sessrec;
using Catch::Matchers::WithinAbs;

namespace {

/// Scores come from a fixed function of the last observed item.
class TableScorer : public SequentialScorer {
 public:
  TableScorer(std::size_t n, std::function<std::vector<double>(std::size_t)> f) : n_(n), f_(std::move(f)) {}
  std::size_t n_items() const override { return n_; }
  void begin_user(std::size_t, const UserHistory*) override {}
  void begin_session() override {}
  void observe(std::size_t item, std::vector<double>& out) override { out = f_(item); }

 private:
  std::size_t n_;
  std::function<std::vector<double>(std::size_t)> f_;
};

class RandomScorer : public SequentialScorer {
 public:
  RandomScorer(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) {}
  std::size_t n_items() const override { return n_; }
  void begin_user(std::size_t, const UserHistory*) override {}
  void begin_session() override {}
  void observe(std::size_t, std::vector<double>& out) override {
    out.resize(n_);
    for (double& v : out) v = rng_.uniform(0.0, 1.0);
  }

 private:
  std::size_t n_;
  Rng rng_;
};

TargetRecord rec(std::size_t session, std::size_t position, std::size_t length, std::size_t rank,
                 std::size_t history = 1) {
  return TargetRecord{session, 0, position, length, history, rank};
}

}  // namespace

TEST_CASE("rank examples with pessimistic ties") {
  const std::vector<double> s{0.9, 0.5, 0.5, 0.1};
  CHECK(rank_of_target(s, 0) == 1);
  CHECK(rank_of_target(s, 1) == 3);
  CHECK(rank_of_target(s, 2) == 3);
  CHECK(rank_of_target(s, 3) == 4);
  const std::vector<double> flat(6, 0.25);
  CHECK(rank_of_target(flat, 4) == 6);
  const std::vector<char> mask{1, 0, 1, 1};
  CHECK(rank_of_target(s, 3, mask) == 3);
  CHECK_THROWS_AS(rank_of_target(s, 4), std::out_of_range);
}

TEST_CASE("rank matches a full-sort oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> s(2 + rng.below(30));
    // Coarse values so ties are common.
    for (double& v : s) v = static_cast<double>(rng.below(6)) / 5.0;
    const std::size_t t = rng.below(s.size());
    CHECK(rank_of_target(s, t) == testing::sorted_rank(s, t));
  }
}

TEST_CASE("single-target metrics") {
  const std::vector<TargetRecord> three{rec(0, 2, 2, 3)};
  const auto r = summarize(three, 5);
  CHECK(r.recall == 1.0);
  CHECK_THAT(r.mrr, WithinAbs(1.0 / 3.0, 1e-15));
  CHECK_THAT(r.precision, WithinAbs(0.2, 1e-15));
  const std::vector<TargetRecord> six{rec(0, 2, 2, 6)};
  const auto q = summarize(six, 5);
  CHECK(q.recall == 0.0);
  CHECK(q.mrr == 0.0);
  CHECK(q.precision == 0.0);
}

TEST_CASE("headline averages per target, breakdowns per session") {
  // Session 0: three targets, all hits at rank 1. Session 1: one miss.
  const std::vector<TargetRecord> recs{rec(0, 2, 4, 1), rec(0, 3, 4, 1), rec(0, 4, 4, 1), rec(1, 2, 2, 9)};
  CHECK_THAT(summarize(recs, 5).recall, WithinAbs(0.75, 1e-15));
  const auto ps = summarize_per_session(recs, 5);
  CHECK_THAT(ps.recall, WithinAbs(0.5, 1e-15));
  CHECK(ps.sessions == 2);
  CHECK(ps.targets == 4);
}

TEST_CASE("position groups") {
  CHECK(std::string(position_group(1, PositionKey::kTarget)) == "beginning");
  CHECK(std::string(position_group(2, PositionKey::kTarget)) == "beginning");
  CHECK(std::string(position_group(3, PositionKey::kTarget)) == "middle");
  CHECK(std::string(position_group(4, PositionKey::kTarget)) == "middle");
  CHECK(std::string(position_group(5, PositionKey::kTarget)) == "end");
  CHECK(std::string(position_group(3, PositionKey::kPrefix)) == "beginning");
  CHECK(std::string(position_group(6, PositionKey::kPrefix)) == "end");
}

TEST_CASE("position breakdown of a five-event session") {
  // Targets sit at positions 2..5 of a five-event session: B, M, M, E.
  const Corpus test = testing::make_corpus(5, {{{0, 1, 2, 3, 4}}, {{0, 1, 2, 3}}});
  TableScorer scorer(5, [](std::size_t item) {
    std::vector<double> s(5, 0.0);
    s[(item + 1) % 5] = 1.0;
    return s;
  });
  const EvalRun run = evaluate_model(scorer, test, Corpus{}, EvalConfig{});
  REQUIRE(run.records.size() == 7);
  const auto g = breakdown_by_position(run, 5);
  REQUIRE(g.find("beginning"));
  REQUIRE(g.find("middle"));
  REQUIRE(g.find("end"));
  CHECK(g.find("beginning")->targets == 1);
  CHECK(g.find("middle")->targets == 2);
  CHECK(g.find("end")->targets == 1);
  // The four-event session is outside the breakdown.
  const Corpus short_only = testing::make_corpus(5, {{{0, 1, 2, 3}}});
  CHECK(breakdown_by_position(evaluate_model(scorer, short_only, Corpus{}, EvalConfig{}), 5).groups.empty());
}

TEST_CASE("history breakdown splits at six sessions") {
  std::vector<TargetRecord> recs{rec(0, 2, 2, 1, 6), rec(1, 2, 2, 9, 7)};
  EvalRun run{recs, 2, 0};
  const auto g = breakdown_by_history_length(run, 5);
  REQUIRE(g.find("short"));
  REQUIRE(g.find("long"));
  CHECK(g.find("short")->recall == 1.0);
  CHECK(g.find("long")->recall == 0.0);
  run.records.pop_back();
  CHECK(breakdown_by_history_length(run, 5).find("long") == nullptr);
}

TEST_CASE("grouped metrics match a counting oracle") {
  Rng rng(17);
  std::vector<TargetRecord> recs;
  for (std::size_t sid = 0; sid < 60; ++sid) {
    const std::size_t len = 2 + rng.below(8), hist = rng.below(12);
    for (std::size_t p = 2; p <= len; ++p) recs.push_back(rec(sid, p, len, 1 + rng.below(12), hist));
  }
  EvalRun run{recs, 60, 0};
  const auto g = breakdown_by_position(run, 5);
  for (const char* name : {"beginning", "middle", "end"}) {
    std::map<std::size_t, std::pair<double, double>> per;  // hits, count
    for (const auto& t : recs) {
      if (t.session_length < 5) continue;
      const char* want = t.position <= 2 ? "beginning" : t.position <= 4 ? "middle" : "end";
      if (std::string(want) != name) continue;
      per[t.session].first += t.rank <= 5;
      per[t.session].second += 1;
    }
    double sum = 0;
    for (const auto& [sid, hc] : per) sum += hc.first / hc.second;
    REQUIRE(g.find(name));
    CHECK_THAT(g.find(name)->recall, WithinAbs(sum / per.size(), 1e-12));
  }
}

TEST_CASE("recall is monotone in the cutoff") {
  Rng rng(9);
  std::vector<TargetRecord> recs;
  for (std::size_t k = 0; k < 200; ++k) recs.push_back(rec(k / 4, 2, 5, 1 + rng.below(40)));
  double prev = 0.0;
  for (std::size_t n = 1; n <= 40; ++n) {
    const double r = summarize(recs, n).recall;
    CHECK(r >= prev);
    prev = r;
  }
  CHECK(prev == 1.0);
}

TEST_CASE("a random scorer lands near cutoff over catalog size") {
  const std::size_t n = 50;
  Rng rng(4);
  const Corpus test = random_corpus(rng, 200, n, 2, 10);
  RandomScorer scorer(n, 3);
  const auto r = summarize(evaluate_model(scorer, test, Corpus{}, EvalConfig{}).records, 5);
  CHECK(r.targets > 1000);
  CHECK_THAT(r.recall, WithinAbs(5.0 / n, 0.03));
}

TEST_CASE("candidate masks restrict the ranking") {
  Rng rng(4);
  const Corpus train = random_corpus(rng, 30, 20, 3, 6);
  const auto mask = top_supported_items(train, 5);
  CHECK(std::count(mask.begin(), mask.end(), 1) == 5);
  const auto all = top_supported_items(train, 100);
  CHECK(std::count(all.begin(), all.end(), 1) == 20);
}

TEST_CASE("users without history are skipped for history-based scorers") {
  const Corpus train = testing::make_corpus(4, {{{0, 1}}});
  Corpus test = testing::make_corpus(4, {{{1, 2}}, {{2, 3}}});
  SessionRnnModel m = init_session_rnn(4, TrainConfig{});
  ConcatRnnScorer scorer(m);
  const EvalRun run = evaluate_model(scorer, test, train, EvalConfig{});
  CHECK(run.skipped_users == 1);
  // The concatenated model also predicts the first event of the session.
  CHECK(run.records.size() == 2);
  EvalConfig skip;
  skip.skip_first_prediction = true;
  CHECK(evaluate_model(scorer, test, train, skip).records.size() == 1);
}

TEST_CASE("report rows satisfy the precision identity") {
  std::vector<EvalSummary> runs;
  Rng rng(6);
  for (int seed = 0; seed < 3; ++seed) {
    std::vector<TargetRecord> recs;
    for (std::size_t sid = 0; sid < 30; ++sid)
      for (std::size_t p = 2; p <= 6; ++p) recs.push_back(rec(sid, p, 6, 1 + rng.below(10), rng.below(10)));
    runs.push_back(summarize_run(EvalRun{recs, 30, 0}, EvalConfig{}));
  }
  const auto rows = build_report("hrnn-init", runs);
  std::map<std::string, std::map<std::string, double>> by_group;
  for (const auto& r : rows) {
    CHECK(r.seed_count == 3);
    by_group[r.group][r.metric] = r.value;
  }
  CHECK(by_group.count("all"));
  CHECK(by_group.count("position:end"));
  for (const auto& [group, m] : by_group) CHECK(m.at("precision@5") == m.at("recall@5") / 5.0);
  const double mean = (runs[0].headline.recall + runs[1].headline.recall + runs[2].headline.recall) / 3.0;
  CHECK_THAT(by_group["all"]["recall@5"], WithinAbs(mean, 1e-15));
  CHECK(format_value(0.1326 / 5).substr(0, 6) == "0.0265");
}

TEST_CASE("report TSV layout") {
  std::vector<TargetRecord> recs{rec(0, 2, 2, 1)};
  const auto rows = build_report("ppop", {summarize_run(EvalRun{recs, 1, 0}, EvalConfig{})});
  std::ostringstream os;
  write_report_tsv(os, rows);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "model\tmetric\tcutoff\tgroup\tvalue\tseed_count");
  std::getline(in, line);
  CHECK(line == "ppop\trecall@5\t5\tall\t1\t1");
  CHECK_THROWS_AS(write_report_tsv("/nonexistent-dir/x.tsv", rows), IoError);
  CHECK_THROWS(build_report("x", {}));
}
