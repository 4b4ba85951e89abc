// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint files: a text header carrying the model kind and the full
// configuration as JSON, followed by named binary matrices.
//
//   SESSREC-CKPT-v1
//   kind\t<rnn|rnn-concat|hrnn-init|hrnn-all|ppop|itemknn>
//   config\t<json>
//   matrices\t<count>
//   <name>\n<binary matrix>   (repeated)
#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sessrec/corpus.hpp"
#include "sessrec/hier_model.hpp"
#include "sessrec/session_model.hpp"

namespace sessrec {

inline constexpr const char* kCheckpointMagic = "SESSREC-CKPT-v1";

enum class ModelKind { kRnn, kRnnConcat, kHrnnInit, kHrnnAll, kPpop, kItemKnn };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kRnn: return "rnn";
    case ModelKind::kRnnConcat: return "rnn-concat";
    case ModelKind::kHrnnInit: return "hrnn-init";
    case ModelKind::kHrnnAll: return "hrnn-all";
    case ModelKind::kPpop: return "ppop";
    case ModelKind::kItemKnn: return "itemknn";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  for (auto k : {ModelKind::kRnn, ModelKind::kRnnConcat, ModelKind::kHrnnInit, ModelKind::kHrnnAll, ModelKind::kPpop,
                 ModelKind::kItemKnn})
    if (s == model_kind_name(k)) return k;
  throw std::invalid_argument("unknown model '" + std::string(s) +
                              "' (expected rnn|rnn-concat|hrnn-init|hrnn-all|ppop|itemknn)");
}

inline bool is_hierarchical(ModelKind k) { return k == ModelKind::kHrnnInit || k == ModelKind::kHrnnAll; }
inline bool is_neural(ModelKind k) { return k != ModelKind::kPpop && k != ModelKind::kItemKnn; }

struct Checkpoint {
  ModelKind kind = ModelKind::kRnn;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> matrices;
};

inline nlohmann::json to_json(const HrnnConfig& c) {
  nlohmann::json j;
  j["loss"] = std::string(loss_name(c.base.loss));
  j["batch_size"] = c.base.batch_size;
  j["epochs"] = c.base.epochs;
  j["learning_rate"] = c.base.learning_rate;
  j["momentum"] = c.base.momentum;
  j["dropout_session"] = c.base.dropout_hidden;
  j["seed"] = c.base.seed;
  j["hidden_size"] = c.base.hidden_size;
  j["variant"] = std::string(variant_name(c.variant));
  j["user_hidden_size"] = c.user_hidden_size;
  j["dropout_user"] = c.dropout_user;
  j["dropout_init"] = c.dropout_init;
  j["truncation"] = c.truncation == Truncation::kFull ? "full" : "one-boundary";
  j["user_update"] = c.user_update == UserUpdate::kPerStep ? "per-step" : "session-end";
  return j;
}

inline HrnnConfig hrnn_config_from_json(const nlohmann::json& j) {
  HrnnConfig c;
  c.base.loss = parse_loss(j.at("loss").get<std::string>());
  c.base.batch_size = j.at("batch_size").get<std::size_t>();
  c.base.epochs = j.at("epochs").get<std::size_t>();
  c.base.learning_rate = j.at("learning_rate").get<double>();
  c.base.momentum = j.at("momentum").get<double>();
  c.base.dropout_hidden = j.at("dropout_session").get<double>();
  c.base.seed = j.at("seed").get<std::uint64_t>();
  c.base.hidden_size = j.at("hidden_size").get<std::size_t>();
  c.variant = parse_variant(j.value("variant", std::string("init")));
  c.user_hidden_size = j.value("user_hidden_size", std::size_t{0});
  c.dropout_user = j.value("dropout_user", 0.0);
  c.dropout_init = j.value("dropout_init", 0.0);
  c.truncation = j.value("truncation", std::string("one-boundary")) == "full" ? Truncation::kFull : Truncation::kOneBoundary;
  c.user_update = j.value("user_update", std::string("session-end")) == "per-step" ? UserUpdate::kPerStep
                                                                                  : UserUpdate::kAtSessionEnd;
  return c;
}

template <class Model>
void store_matrices(Checkpoint& ck, const Model& m) {
  ck.matrices.clear();
  m.for_each([&](const std::string& name, const Matrix& x, bool) { ck.matrices.emplace_back(name, x); });
}

/// Copies matrices into `m` by name; names and shapes must match exactly.
template <class Model>
void load_matrices(const Checkpoint& ck, Model& m) {
  std::size_t k = 0;
  m.for_each([&](const std::string& name, Matrix& x, bool) {
    if (k >= ck.matrices.size() || ck.matrices[k].first != name)
      throw DataError("checkpoint is missing matrix '" + name + "'");
    const Matrix& src = ck.matrices[k++].second;
    if (src.rows() != x.rows() || src.cols() != x.cols())
      throw DataError("checkpoint matrix '" + name + "' has the wrong shape");
    x = src;
  });
  if (k != ck.matrices.size()) throw DataError("checkpoint has unexpected extra matrices");
}

/// Fails unless the checkpoint was trained on the same item vocabulary.
inline void check_vocabulary(const Checkpoint& ck, const Corpus& corpus) {
  const auto n = ck.config.value("n_items", std::size_t{0});
  const auto fp = ck.config.value("item_fingerprint", std::uint64_t{0});
  if (n != corpus.n_items() || fp != corpus.item_vocab.fingerprint())
    throw DataError("item vocabulary of the corpus does not match the checkpoint");
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path);
  os << kCheckpointMagic << "\n";
  os << "kind\t" << model_kind_name(ck.kind) << "\n";
  os << "config\t" << ck.config.dump() << "\n";
  os << "matrices\t" << ck.matrices.size() << "\n";
  for (const auto& [name, m] : ck.matrices) {
    os << name << "\n";
    write_matrix(os, m);
  }
  if (!os) throw IoError("write failed for checkpoint " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  auto expect = [&](const std::string& key) {
    std::string line;
    if (!std::getline(in, line) || line.rfind(key + "\t", 0) != 0)
      throw DataError(path + ": malformed checkpoint header (expected '" + key + "')");
    return line.substr(key.size() + 1);
  };
  std::string magic;
  if (!std::getline(in, magic) || magic != kCheckpointMagic) throw DataError(path + ": not a checkpoint file");
  Checkpoint ck;
  ck.kind = parse_model_kind(expect("kind"));
  try {
    ck.config = nlohmann::json::parse(expect("config"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad checkpoint config: " + e.what());
  }
  const std::size_t count = std::stoull(expect("matrices"));
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    if (!std::getline(in, name)) throw DataError(path + ": truncated checkpoint");
    try {
      ck.matrices.emplace_back(name, read_matrix(in));
    } catch (const std::runtime_error& e) {
      throw DataError(path + ": " + e.what());
    }
  }
  return ck;
}

}  // namespace sessrec
