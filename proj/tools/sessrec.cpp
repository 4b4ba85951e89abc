// SPDX-License-Identifier: Apache-2.0
//
// sessrec: preprocess, train, eval and search from the command line.
//
// Exit codes: 0 ok, 1 usage or bad configuration, 2 I/O or malformed input
// data, 3 numerical divergence during training.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sessrec/sessrec.hpp"

namespace fs = std::filesystem;
using namespace sessrec;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitDiverged = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------------ options

struct ModelOptions {
  std::string model = "hrnn-init";
  std::size_t hidden = 100;
  std::size_t user_hidden = 0;
  std::size_t batch = 50;
  double lr = 0.1;
  double momentum = 0.0;
  double dropout = 0.1;
  double dropout_user = 0.0;
  double dropout_init = 0.0;
  std::string loss = "top1";
  std::size_t epochs = 10;
  std::uint64_t seed = 42;
  std::string truncation = "one-boundary";
  std::string user_update = "session-end";
  std::size_t knn_k = 300;

  ModelSpec spec() const {
    ModelSpec s;
    s.kind = parse_model_kind(model);
    s.cfg.base.loss = parse_loss(loss);
    s.cfg.base.hidden_size = hidden;
    s.cfg.base.batch_size = batch;
    s.cfg.base.learning_rate = lr;
    s.cfg.base.momentum = momentum;
    s.cfg.base.dropout_hidden = dropout;
    s.cfg.base.epochs = epochs;
    s.cfg.base.seed = seed;
    s.cfg.user_hidden_size = user_hidden;
    s.cfg.dropout_user = dropout_user;
    s.cfg.dropout_init = dropout_init;
    s.cfg.truncation = truncation == "full" ? Truncation::kFull : Truncation::kOneBoundary;
    s.cfg.user_update = user_update == "per-step" ? UserUpdate::kPerStep : UserUpdate::kAtSessionEnd;
    s.knn_neighbors = knn_k;
    if (is_neural(s.kind)) s.cfg.validate();
    return s;
  }
};

struct EvalOptions {
  std::size_t cutoff = 5;
  std::size_t seeds = 1;
  std::size_t candidates = 0;
  std::string position_key = "target";
  std::size_t history_boundary = 6;

  EvalConfig config() const {
    if (cutoff < 1) throw UsageError("--cutoff must be >= 1");
    EvalConfig ec;
    ec.cutoff = cutoff;
    ec.top_m = candidates;
    ec.position_key = position_key == "prefix" ? PositionKey::kPrefix : PositionKey::kTarget;
    ec.history_boundary = history_boundary;
    return ec;
  }
};

CLI::Option* env(CLI::Option* o, const char* name) { return o->envname(std::string("SESSREC_") + name); }

void add_model_options(CLI::App* cmd, ModelOptions& o) {
  env(cmd->add_option("--model", o.model, "rnn | rnn-concat | hrnn-init | hrnn-all | ppop | itemknn")
          ->check(CLI::IsMember({"rnn", "rnn-concat", "hrnn-init", "hrnn-all", "ppop", "itemknn"}))
          ->capture_default_str(),
      "MODEL");
  env(cmd->add_option("--hidden", o.hidden, "session-level hidden units")->capture_default_str(), "HIDDEN");
  env(cmd->add_option("--user-hidden", o.user_hidden, "user-level hidden units (0: same as --hidden)")
          ->capture_default_str(),
      "USER_HIDDEN");
  env(cmd->add_option("--batch", o.batch, "mini-batch size (lanes)")->capture_default_str(), "BATCH");
  env(cmd->add_option("--lr", o.lr, "AdaGrad learning rate")->capture_default_str(), "LR");
  env(cmd->add_option("--momentum", o.momentum)->capture_default_str(), "MOMENTUM");
  env(cmd->add_option("--dropout", o.dropout, "session-level dropout")->capture_default_str(), "DROPOUT");
  env(cmd->add_option("--dropout-user", o.dropout_user)->capture_default_str(), "DROPOUT_USER");
  env(cmd->add_option("--dropout-init", o.dropout_init)->capture_default_str(), "DROPOUT_INIT");
  env(cmd->add_option("--loss", o.loss)->check(CLI::IsMember({"top1", "bpr", "xent"}))->capture_default_str(),
      "LOSS");
  env(cmd->add_option("--epochs", o.epochs)->capture_default_str(), "EPOCHS");
  env(cmd->add_option("--seed", o.seed)->capture_default_str(), "SEED");
  env(cmd->add_option("--truncation", o.truncation)
          ->check(CLI::IsMember({"one-boundary", "full"}))
          ->capture_default_str(),
      "TRUNCATION");
  env(cmd->add_option("--user-update", o.user_update)
          ->check(CLI::IsMember({"session-end", "per-step"}))
          ->capture_default_str(),
      "USER_UPDATE");
  env(cmd->add_option("--knn-k", o.knn_k, "Item-KNN neighborhood size")->capture_default_str(), "KNN_K");
}

void add_eval_options(CLI::App* cmd, EvalOptions& o) {
  env(cmd->add_option("--cutoff", o.cutoff, "N in Recall@N / MRR@N / Precision@N")->capture_default_str(), "CUTOFF");
  env(cmd->add_option("--candidates", o.candidates, "rank among the M most supported items (0: all)")
          ->capture_default_str(),
      "CANDIDATES");
  env(cmd->add_option("--position-key", o.position_key, "position groups keyed by target or prefix length")
          ->check(CLI::IsMember({"target", "prefix"}))
          ->capture_default_str(),
      "POSITION_KEY");
  env(cmd->add_option("--history-boundary", o.history_boundary, "Short history: <= this many sessions")
          ->capture_default_str(),
      "HISTORY_BOUNDARY");
}

// ------------------------------------------------------------------ helpers

std::string stem(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

EpochCallback epoch_logger(std::size_t epochs) {
  return [epochs](std::size_t e, double loss) {
    std::printf("epoch %zu/%zu loss %.6f\n", e, epochs, loss);
    std::fflush(stdout);
  };
}

/// Config values become option defaults, so SESSREC_* variables and flags
/// both override them.
std::string find_config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return {};
}

void apply_config_file(CLI::App& app, const std::string& path) {
  if (!fs::is_regular_file(path)) throw IoError("cannot open config " + path);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_file(path);
  } catch (const CLI::Error& e) {
    throw DataError(path + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (item.parents.size() != 1) throw UsageError(path + ": '" + item.name + "' must sit under a command section");
    std::string key = item.name;
    std::replace(key.begin(), key.end(), '_', '-');
    std::string value;
    for (const auto& v : item.inputs) value += (value.empty() ? "" : ",") + v;
    try {
      app.get_subcommand(item.parents[0])->get_option("--" + key)->run_callback_for_default()->default_val(value);
    } catch (const CLI::Error& e) {
      throw UsageError(path + ": [" + item.parents[0] + "] " + key + ": " + e.what());
    }
  }
}

std::string require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
  return value;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << text;
}

// ------------------------------------------------------------------ commands

struct PreprocessOptions {
  std::string events;
  std::string corpus_dir;
  std::string delimiter = "tab";
  bool header = false;
  bool xing = false;
  std::int64_t idle = 1800;
  std::size_t min_item_support = 0;
  std::size_t min_session_len = 3;
  std::size_t min_user_sessions = 5;
  std::vector<std::string> drop_types;
  bool dedup = false;
};

int cmd_preprocess(PreprocessOptions o) {
  require(o.events, "--events");
  require(o.corpus_dir, "--corpus-dir");
  if (o.xing) {
    // Job-posting log: drop deletions, collapse repeats, support >= 20.
    o.drop_types.insert(o.drop_types.end(), {"delete", "4"});
    o.dedup = true;
    if (o.min_item_support == 0) o.min_item_support = 20;
  }
  SplitSpec spec;
  spec.idle_threshold_s = o.idle;
  spec.min_item_support = o.min_item_support;
  spec.min_session_len = o.min_session_len;
  spec.min_user_sessions = o.min_user_sessions;
  spec.dropped_types.insert(o.drop_types.begin(), o.drop_types.end());
  spec.dedup_same_type_in_session = o.dedup;
  if (o.min_user_sessions < 2) throw UsageError("--min-user-sessions must be >= 2 to hold out a test session");

  EventFormat fmt;
  fmt.delimiter = o.delimiter == "comma" ? ',' : o.delimiter == "tab" ? '\t' : o.delimiter.at(0);
  fmt.header = o.header;
  const LoadResult loaded = load_events(o.events, fmt);
  if (loaded.malformed > 0) std::cerr << "warning: skipped " << loaded.malformed << " malformed line(s)\n";

  SessionLog log = sessionize(loaded.events, spec);
  Corpus full;
  full.users = filter_corpus(std::move(log.users), spec);
  full.item_vocab = std::move(log.items);
  full.user_vocab = std::move(log.user_ids);
  if (full.users.empty()) throw DataError("no users left after filtering " + o.events);

  full.metadata["source"] = fs::path(o.events).filename().string();
  full.metadata["idle_threshold_s"] = std::to_string(spec.idle_threshold_s);
  full.metadata["min_item_support"] = std::to_string(spec.min_item_support);
  full.metadata["min_session_len"] = std::to_string(spec.min_session_len);
  full.metadata["min_user_sessions"] = std::to_string(spec.min_user_sessions);
  full.metadata["dedup_same_type_in_session"] = spec.dedup_same_type_in_session ? "1" : "0";
  std::string dropped;
  for (const auto& t : spec.dropped_types) dropped += (dropped.empty() ? "" : ",") + t;
  full.metadata["dropped_types"] = dropped;

  fs::create_directories(o.corpus_dir);
  SplitResult split = split_last_session(full);
  split.train.metadata["split"] = "train";
  split.test.metadata["split"] = "test";
  write_corpus(split.train, stem(o.corpus_dir, "train"));
  write_corpus(split.test, stem(o.corpus_dir, "test"));

  std::ostringstream stats;
  // Statistics of the filtered corpus, before the split.
  stats << "[all]\n" << format_stats(corpus_stats(full)) << "[train]\n" << format_stats(corpus_stats(split.train))
        << "[test]\n" << format_stats(corpus_stats(split.test));

  bool validation = true;
  for (const auto& u : split.train.users) validation = validation && u.sessions.size() >= 2;
  if (validation) {
    SplitResult inner = split_last_session(split.train);
    inner.train.metadata["split"] = "train_tr";
    inner.test.metadata["split"] = "valid";
    write_corpus(inner.train, stem(o.corpus_dir, "train_tr"));
    write_corpus(inner.test, stem(o.corpus_dir, "valid"));
    stats << "[train_tr]\n" << format_stats(corpus_stats(inner.train)) << "[valid]\n"
          << format_stats(corpus_stats(inner.test));
  } else {
    std::cerr << "warning: some users have a single training session; no validation split written\n";
  }
  write_text(stem(o.corpus_dir, "stats.txt"), stats.str());
  std::cout << stats.str();
  return 0;
}

struct TrainOptions {
  std::string corpus_dir;
  std::string checkpoint;
  bool validation = false;
  ModelOptions model;
};

std::string default_checkpoint(const std::string& dir, const std::string& model, bool validation) {
  return stem(dir, model + (validation ? ".valid" : "") + ".ckpt");
}

int cmd_train(const TrainOptions& o) {
  require(o.corpus_dir, "--corpus-dir");
  const ModelSpec spec = o.model.spec();
  const Corpus train = read_corpus(stem(o.corpus_dir, o.validation ? "train_tr" : "train"));
  const std::string path =
      o.checkpoint.empty() ? default_checkpoint(o.corpus_dir, o.model.model, o.validation) : o.checkpoint;
  const Checkpoint ck = train_checkpoint(spec, train, epoch_logger(spec.cfg.base.epochs));
  write_checkpoint(path, ck);
  std::cout << "checkpoint " << path << "\n";
  return 0;
}

struct EvalCmdOptions {
  std::string corpus_dir;
  std::string checkpoint;
  std::string report;
  bool validation = false;
  EvalOptions eval;
};

int cmd_eval(const EvalCmdOptions& o) {
  require(o.corpus_dir, "--corpus-dir");
  require(o.checkpoint, "--checkpoint");
  if (o.eval.seeds < 1) throw UsageError("--seeds must be >= 1");
  const EvalConfig ec = o.eval.config();
  const Checkpoint ck = read_checkpoint(o.checkpoint);
  const Corpus train = read_corpus(stem(o.corpus_dir, o.validation ? "train_tr" : "train"));
  const Corpus test = read_corpus(stem(o.corpus_dir, o.validation ? "valid" : "test"));

  std::vector<EvalSummary> runs{evaluate_checkpoint(ck, train, test, ec)};
  if (is_neural(ck.kind)) {
    // Further replicas retrain the stored configuration with shifted seeds.
    ModelSpec spec = spec_from_checkpoint(ck);
    for (std::size_t k = 1; k < o.eval.seeds; ++k) {
      ModelSpec replica = spec;
      replica.cfg.base.seed = spec.cfg.base.seed + k;
      std::cerr << "seed " << replica.cfg.base.seed << ": training\n";
      runs.push_back(evaluate_checkpoint(train_checkpoint(replica, train), train, test, ec));
    }
  }
  for (const auto& r : runs)
    if (r.skipped_users > 0) std::cerr << "warning: " << r.skipped_users << " test user(s) without history skipped\n";
  const auto rows = build_report(model_kind_name(ck.kind), runs);
  const std::string path =
      o.report.empty() ? stem(o.corpus_dir, std::string("report_") + model_kind_name(ck.kind) + ".tsv") : o.report;
  write_report_tsv(path, rows);
  print_report_table(std::cout, rows);
  std::cout << "report " << path << "\n";
  return 0;
}

struct SearchOptions {
  std::string corpus_dir;
  std::size_t trials = 10;
  double lr_min = 0.01, lr_max = 0.5;
  double momentum_max = 0.5;
  double dropout_max = 0.5;
  std::string log;
  ModelOptions model;
  EvalOptions eval;
};

int cmd_search(const SearchOptions& o) {
  require(o.corpus_dir, "--corpus-dir");
  if (o.trials < 1) throw UsageError("--trials must be >= 1");
  if (!(o.lr_min > 0.0) || o.lr_max < o.lr_min) throw UsageError("learning-rate range must satisfy 0 < min <= max");
  const ModelSpec base = o.model.spec();
  const EvalConfig ec = o.eval.config();
  const Corpus train = read_corpus(stem(o.corpus_dir, "train_tr"));
  const Corpus valid = read_corpus(stem(o.corpus_dir, "valid"));

  const std::string log_path =
      o.log.empty() ? stem(o.corpus_dir, "search_" + o.model.model + ".tsv") : o.log;
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw IoError("cannot write " + log_path);
  log << "trial\tlr\tmomentum\tdropout\tdropout_user\tdropout_init\trecall@" << ec.cutoff << "\n";

  std::size_t best = 0;
  double best_recall = -1.0;
  ModelSpec best_spec = base;
  for (std::size_t t = 0; t < o.trials; ++t) {
    // Each trial owns the stream derived from (seed, trial).
    Rng rng = Rng::derive(base.cfg.base.seed, 1000 + t);
    ModelSpec spec = base;
    spec.cfg.base.learning_rate = std::exp(rng.uniform(std::log(o.lr_min), std::log(o.lr_max)));
    spec.cfg.base.momentum = rng.uniform(0.0, o.momentum_max);
    spec.cfg.base.dropout_hidden = rng.uniform(0.0, o.dropout_max);
    spec.cfg.dropout_user = rng.uniform(0.0, o.dropout_max);
    spec.cfg.dropout_init = rng.uniform(0.0, o.dropout_max);
    const double recall = evaluate_checkpoint(train_checkpoint(spec, train), train, valid, ec).headline.recall;
    char line[256];
    std::snprintf(line, sizeof line, "%zu\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\t%s", t, spec.cfg.base.learning_rate,
                  spec.cfg.base.momentum, spec.cfg.base.dropout_hidden, spec.cfg.dropout_user, spec.cfg.dropout_init,
                  format_value(recall).c_str());
    log << line << "\n";
    std::cout << line << "\n";
    if (recall > best_recall) {
      best_recall = recall;
      best = t;
      best_spec = spec;
    }
  }
  nlohmann::json j = spec_to_json(best_spec, train);
  j["trial"] = best;
  j["validation_recall"] = best_recall;
  const std::string best_path = stem(o.corpus_dir, "search_" + o.model.model + ".best.json");
  write_text(best_path, j.dump(2) + "\n");
  std::cout << "best trial " << best << " recall@" << ec.cutoff << " " << format_value(best_recall) << "\n";
  std::cout << "best config " << best_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized session-based recommendation with hierarchical RNNs"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "TOML/INI file; keys go under [preprocess], [train], [eval] or [search]");

  PreprocessOptions pre;
  auto* p = app.add_subcommand("preprocess", "sessionize, filter and split an event log");
  env(p->add_option("--events", pre.events, "user, item, timestamp, type per line"), "EVENTS");
  env(p->add_option("--corpus-dir", pre.corpus_dir, "output directory"), "CORPUS_DIR");
  p->add_option("--delimiter", pre.delimiter, "tab, comma or a single character")->capture_default_str();
  p->add_flag("--header", pre.header, "skip the first line");
  p->add_flag("--xing", pre.xing, "drop deletions, dedup repeats, item support >= 20");
  p->add_option("--idle-threshold", pre.idle, "session gap in seconds")->capture_default_str();
  env(p->add_option("--min-item-support", pre.min_item_support)->capture_default_str(), "MIN_ITEM_SUPPORT");
  p->add_option("--min-session-len", pre.min_session_len)->capture_default_str();
  p->add_option("--min-user-sessions", pre.min_user_sessions)->capture_default_str();
  p->add_option("--drop-type", pre.drop_types, "interaction type to discard (repeatable)")->delimiter(',');
  p->add_flag("--dedup", pre.dedup, "collapse repeated (item, type) pairs within a session");

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "train a model and write a checkpoint");
  env(t->add_option("--corpus-dir", tr.corpus_dir), "CORPUS_DIR");
  t->add_option("--checkpoint", tr.checkpoint, "output path (default <corpus-dir>/<model>.ckpt)");
  t->add_flag("--validation", tr.validation, "train on train_tr instead of train");
  add_model_options(t, tr.model);

  EvalCmdOptions ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on the held-out sessions");
  env(e->add_option("--corpus-dir", ev.corpus_dir), "CORPUS_DIR");
  e->add_option("--checkpoint", ev.checkpoint);
  e->add_option("--report", ev.report, "TSV path (default <corpus-dir>/report_<model>.tsv)");
  e->add_flag("--validation", ev.validation, "evaluate on valid with train_tr as history");
  env(e->add_option("--seeds", ev.eval.seeds, "replicas; extra ones retrain with seed+1, seed+2, ...")
          ->capture_default_str(),
      "SEEDS");
  add_eval_options(e, ev.eval);

  SearchOptions se;
  auto* s = app.add_subcommand("search", "random hyper-parameter search on the validation split");
  env(s->add_option("--corpus-dir", se.corpus_dir), "CORPUS_DIR");
  env(s->add_option("--trials", se.trials)->capture_default_str(), "TRIALS");
  s->add_option("--lr-min", se.lr_min)->capture_default_str();
  s->add_option("--lr-max", se.lr_max)->capture_default_str();
  s->add_option("--momentum-max", se.momentum_max)->capture_default_str();
  s->add_option("--dropout-max", se.dropout_max)->capture_default_str();
  s->add_option("--log", se.log, "trials TSV (default <corpus-dir>/search_<model>.tsv)");
  add_model_options(s, se.model);
  add_eval_options(s, se.eval);

  try {
    const std::string cfg = find_config_path(argc, argv);
    if (!cfg.empty()) apply_config_file(app, cfg);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitIo;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  }

  try {
    if (p->parsed()) return cmd_preprocess(pre);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (s->parsed()) return cmd_search(se);
  } catch (const DivergenceError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitDiverged;
  } catch (const IoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitIo;
  } catch (const DataError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitIo;
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
