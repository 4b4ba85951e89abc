// SPDX-License-Identifier: Apache-2.0
//
// Train-to-checkpoint and checkpoint-to-report for every model kind.
#pragma once

#include <string>

#include "sessrec/baselines.hpp"
#include "sessrec/checkpoint.hpp"
#include "sessrec/evaluate.hpp"
#include "sessrec/scorers.hpp"
#include "sessrec/training.hpp"

namespace sessrec {

struct ModelSpec {
  ModelKind kind = ModelKind::kHrnnInit;
  HrnnConfig cfg;  // base fields used by every neural model
  std::size_t knn_neighbors = 300;
};

inline nlohmann::json spec_to_json(const ModelSpec& spec, const Corpus& train) {
  nlohmann::json j = to_json(spec.cfg);
  j["model"] = model_kind_name(spec.kind);
  j["knn_neighbors"] = spec.knn_neighbors;
  j["n_items"] = train.n_items();
  j["item_fingerprint"] = train.item_vocab.fingerprint();
  return j;
}

inline ModelSpec spec_from_checkpoint(const Checkpoint& ck) {
  ModelSpec spec;
  spec.kind = ck.kind;
  spec.cfg = hrnn_config_from_json(ck.config);
  spec.knn_neighbors = ck.config.value("knn_neighbors", std::size_t{300});
  if (ck.kind == ModelKind::kHrnnAll) spec.cfg.variant = HrnnVariant::kAll;
  if (ck.kind == ModelKind::kHrnnInit) spec.cfg.variant = HrnnVariant::kInit;
  return spec;
}

/// Trains (or, for the count-based baselines, records) a model on `train`.
/// Count-based baselines are refit from the training corpus at evaluation.
inline Checkpoint train_checkpoint(ModelSpec spec, const Corpus& train, const EpochCallback& on_epoch = {},
                                   const WarningSink& warn = default_warning) {
  if (spec.kind == ModelKind::kHrnnAll) spec.cfg.variant = HrnnVariant::kAll;
  if (spec.kind == ModelKind::kHrnnInit) spec.cfg.variant = HrnnVariant::kInit;
  Checkpoint ck;
  ck.kind = spec.kind;
  ck.config = spec_to_json(spec, train);
  switch (spec.kind) {
    case ModelKind::kRnn:
      store_matrices(ck, train_session_rnn(train, spec.cfg.base, Schedule::kSessionParallel, on_epoch, warn).model);
      break;
    case ModelKind::kRnnConcat:
      store_matrices(ck, train_session_rnn(concat_sessions(train), spec.cfg.base, Schedule::kSessionParallel, on_epoch,
                                           warn)
                             .model);
      break;
    case ModelKind::kHrnnInit:
    case ModelKind::kHrnnAll:
      store_matrices(ck, train_hrnn(train, spec.cfg, on_epoch, warn).model);
      break;
    case ModelKind::kPpop:
    case ModelKind::kItemKnn:
      detail::require_trainable(train);
      break;
  }
  return ck;
}

inline SessionRnnModel session_rnn_from(const Checkpoint& ck) {
  const ModelSpec spec = spec_from_checkpoint(ck);
  SessionRnnModel m = init_session_rnn(ck.config.at("n_items").get<std::size_t>(), spec.cfg.base);
  load_matrices(ck, m);
  return m;
}

inline HrnnModel hrnn_from(const Checkpoint& ck) {
  const ModelSpec spec = spec_from_checkpoint(ck);
  HrnnModel m = init_hrnn(ck.config.at("n_items").get<std::size_t>(), spec.cfg);
  load_matrices(ck, m);
  return m;
}

/// Evaluates a checkpoint on `test`, bootstrapping from `train` where the
/// model needs the user history. RNN-Concat always discards its first
/// prediction of each test session.
inline EvalSummary evaluate_checkpoint(const Checkpoint& ck, const Corpus& train, const Corpus& test, EvalConfig ec) {
  check_vocabulary(ck, train);
  if (test.n_items() != train.n_items() || test.item_vocab.fingerprint() != train.item_vocab.fingerprint())
    throw DataError("train and test corpora use different item vocabularies");
  const std::vector<char> candidates = ec.top_m ? top_supported_items(train, ec.top_m) : std::vector<char>{};
  auto run = [&](SequentialScorer& s) { return summarize_run(evaluate_model(s, test, train, ec, candidates), ec); };
  switch (ck.kind) {
    case ModelKind::kRnn: {
      const auto m = session_rnn_from(ck);
      SessionRnnScorer s(m);
      return run(s);
    }
    case ModelKind::kRnnConcat: {
      const auto m = session_rnn_from(ck);
      ConcatRnnScorer s(m);
      ec.skip_first_prediction = true;
      return run(s);
    }
    case ModelKind::kHrnnInit:
    case ModelKind::kHrnnAll: {
      const auto m = hrnn_from(ck);
      HrnnScorer s(m);
      return run(s);
    }
    case ModelKind::kPpop: {
      const auto m = fit_ppop(train);
      PpopScorer s(m);
      return run(s);
    }
    case ModelKind::kItemKnn: {
      const auto m = fit_item_knn(train, spec_from_checkpoint(ck).knn_neighbors);
      KnnScorer s(m);
      return run(s);
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace sessrec
