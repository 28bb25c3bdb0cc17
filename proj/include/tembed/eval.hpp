#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tembed/csv.hpp"
#include "tembed/detector.hpp"
#include "tembed/errors.hpp"
#include "tembed/rng.hpp"
#include "tembed/store.hpp"

namespace tembed::eval {

struct InstanceMeta {
  std::string id;
  std::string genre;              // VUA
  std::string verb;               // MOH-X / TroFi target verb
  int verb_idx = -1;
  std::string split;              // VUA: train / dev / test, "" if absent
  std::vector<std::string> pos;   // optional POS tags, token-aligned
};

// Instances hold token strings and labels; literal/contextual vectors are
// attached per run from an embedding space.
struct MetaphorDataset {
  std::string name;
  std::vector<detector::LabeledSequence> instances;
  std::vector<InstanceMeta> meta;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

inline int parse_int(const std::string& s, const std::string& what,
                     std::size_t row) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw DatasetError("row " + std::to_string(row) + ": malformed " + what +
                       " '" + s + "'");
  }
}

inline int parse_label(const std::string& s, std::size_t row) {
  int v = parse_int(s, "label", row);
  if (v != 0 && v != 1)
    throw DatasetError("row " + std::to_string(row) + ": label must be 0 or 1");
  return v;
}

inline void expect_header(const std::vector<std::string>& got,
                          const std::vector<std::string>& want_prefix,
                          const std::string& path) {
  if (got.size() < want_prefix.size() ||
      !std::equal(want_prefix.begin(), want_prefix.end(), got.begin()))
    throw FormatError("unexpected header in " + path + " (want " +
                      csv::join_row(want_prefix) + ")");
}

// single-target instance shared by MOH-X and TroFi
inline void add_verb_instance(MetaphorDataset& ds, const std::string& sentence,
                              const std::string& verb, int verb_idx, int label,
                              std::size_t row) {
  auto tokens = split_ws(sentence);
  if (tokens.empty())
    throw DatasetError("row " + std::to_string(row) + ": empty sentence");
  if (verb_idx < 0 || verb_idx >= static_cast<int>(tokens.size()))
    throw DatasetError("row " + std::to_string(row) + ": verb_idx " +
                       std::to_string(verb_idx) + " out of range for " +
                       std::to_string(tokens.size()) + " tokens");
  detector::LabeledSequence seq;
  for (auto& t : tokens) seq.tokens.push_back({t, {}, {}});
  seq.labels.assign(tokens.size(), 0);
  seq.weight_mask.assign(tokens.size(), 0);
  seq.labels[verb_idx] = label;
  seq.weight_mask[verb_idx] = 1;
  InstanceMeta meta;
  meta.id = std::to_string(ds.instances.size());
  meta.verb = verb;
  meta.verb_idx = verb_idx;
  ds.instances.push_back(std::move(seq));
  ds.meta.push_back(std::move(meta));
}

}  // namespace detail

// CSV header: sentence,verb,verb_idx,label. One instance per row; only the
// 0-based verb_idx position is masked in. Sentences are whitespace-tokenized.
inline MetaphorDataset load_mohx(const std::string& path) {
  auto rows = csv::read_file(path);
  if (rows.empty()) throw FormatError("empty dataset file: " + path);
  detail::expect_header(rows[0], {"sentence", "verb", "verb_idx", "label"},
                        path);
  MetaphorDataset ds;
  ds.name = "MOH-X";
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < 4)
      throw DatasetError("row " + std::to_string(r) + ": expected 4 fields");
    detail::add_verb_instance(ds, rows[r][0], rows[r][1],
                              detail::parse_int(rows[r][2], "verb_idx", r),
                              detail::parse_label(rows[r][3], r), r);
  }
  return ds;
}

// CSV header: verb,sentence,verb_idx,label. Duplicate rows are retained.
inline MetaphorDataset load_trofi(const std::string& path) {
  auto rows = csv::read_file(path);
  if (rows.empty()) throw FormatError("empty dataset file: " + path);
  detail::expect_header(rows[0], {"verb", "sentence", "verb_idx", "label"},
                        path);
  MetaphorDataset ds;
  ds.name = "TroFi";
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < 4)
      throw DatasetError("row " + std::to_string(r) + ": expected 4 fields");
    detail::add_verb_instance(ds, rows[r][1], rows[r][0],
                              detail::parse_int(rows[r][2], "verb_idx", r),
                              detail::parse_label(rows[r][3], r), r);
  }
  return ds;
}

inline const std::set<std::string>& vua_genres() {
  static const std::set<std::string> g{"academic", "news", "conversation",
                                       "fiction"};
  return g;
}

// CSV header: fragment_id,sentence_id,genre,tokens,labels with optional
// trailing split and pos columns. tokens/labels (and pos) are space-separated
// and token-aligned; every token is masked in.
inline MetaphorDataset load_vua(const std::string& path) {
  auto rows = csv::read_file(path);
  if (rows.empty()) throw FormatError("empty dataset file: " + path);
  detail::expect_header(
      rows[0], {"fragment_id", "sentence_id", "genre", "tokens", "labels"},
      path);
  int split_col = -1, pos_col = -1;
  for (std::size_t c = 5; c < rows[0].size(); ++c) {
    if (rows[0][c] == "split") split_col = static_cast<int>(c);
    else if (rows[0][c] == "pos") pos_col = static_cast<int>(c);
    else throw FormatError("unknown VUA column '" + rows[0][c] + "' in " + path);
  }
  MetaphorDataset ds;
  ds.name = "VUA";
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < 5)
      throw DatasetError("row " + std::to_string(r) + ": expected 5 fields");
    const std::string& genre = rows[r][2];
    if (!vua_genres().count(genre))
      throw DatasetError("row " + std::to_string(r) + ": unknown genre '" +
                         genre + "'");
    auto tokens = detail::split_ws(rows[r][3]);
    auto labels = detail::split_ws(rows[r][4]);
    if (tokens.empty())
      throw DatasetError("row " + std::to_string(r) + ": empty sentence");
    if (tokens.size() != labels.size())
      throw DatasetError("row " + std::to_string(r) + ": " +
                         std::to_string(tokens.size()) + " tokens vs " +
                         std::to_string(labels.size()) + " labels");
    detector::LabeledSequence seq;
    for (auto& t : tokens) seq.tokens.push_back({t, {}, {}});
    seq.labels.reserve(labels.size());
    for (auto& l : labels) seq.labels.push_back(detail::parse_label(l, r));
    seq.weight_mask.assign(tokens.size(), 1);
    InstanceMeta meta;
    meta.id = rows[r][0] + ":" + rows[r][1];
    meta.genre = genre;
    if (split_col >= 0 && static_cast<int>(rows[r].size()) > split_col)
      meta.split = rows[r][static_cast<std::size_t>(split_col)];
    if (pos_col >= 0 && static_cast<int>(rows[r].size()) > pos_col) {
      meta.pos = detail::split_ws(rows[r][static_cast<std::size_t>(pos_col)]);
      if (!meta.pos.empty() && meta.pos.size() != tokens.size())
        throw DatasetError("row " + std::to_string(r) +
                           ": pos column not token-aligned");
    }
    ds.instances.push_back(std::move(seq));
    ds.meta.push_back(std::move(meta));
  }
  return ds;
}

struct FoldPlan {
  int k = 0;
  std::vector<int> assignments;  // per instance
  std::uint64_t seed = 0;
};

// Seeded shuffle, then round-robin: folds are disjoint, exhaustive, and their
// sizes differ by at most one.
inline FoldPlan make_folds(const MetaphorDataset& ds, int k,
                           std::uint64_t seed) {
  const std::size_t n = ds.instances.size();
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw InvalidArgError("make_folds: k=" + std::to_string(k) +
                          " out of range for " + std::to_string(n) +
                          " instances");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.bounded(i));
    std::swap(order[i - 1], order[j]);
  }
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignments.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    plan.assignments[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return plan;
}

struct InstanceResult {
  std::string id;
  std::string genre;
  std::vector<int> gold;
  std::vector<int> mask;
  std::vector<int> pred;
  std::vector<double> prob;
};

struct EvalReport {
  // metaphor class is the positive class
  double precision = 0, recall = 0, f1 = 0, accuracy = 0;
  long tp = 0, fp = 0, tn = 0, fn = 0;
  std::vector<InstanceResult> instances;
  // run metadata
  std::string dataset, embedding_id, model_kind;
  std::uint64_t seed = 0;
  int fold = -1;  // -1: pooled or single-split report
};

inline void finalize_metrics(EvalReport& r) {
  r.precision = r.tp + r.fp > 0 ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0;
  r.recall = r.tp + r.fn > 0 ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0;
  r.f1 = r.precision + r.recall > 0
             ? 2 * r.precision * r.recall / (r.precision + r.recall)
             : 0;
  const long total = r.tp + r.fp + r.tn + r.fn;
  r.accuracy = total > 0 ? static_cast<double>(r.tp + r.tn) / total : 0;
}

// Confusion counts and metrics over masked-in positions.
inline EvalReport compute_metrics(const std::vector<int>& predictions,
                                  const std::vector<int>& gold,
                                  const std::vector<int>& mask) {
  if (predictions.size() != gold.size() || gold.size() != mask.size())
    throw InvalidArgError("compute_metrics: length mismatch");
  EvalReport r;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!mask[i]) continue;
    if (gold[i] == 1 && predictions[i] == 1) ++r.tp;
    else if (gold[i] == 0 && predictions[i] == 1) ++r.fp;
    else if (gold[i] == 1 && predictions[i] == 0) ++r.fn;
    else ++r.tn;
  }
  finalize_metrics(r);
  return r;
}

inline EvalReport report_from_instances(std::vector<InstanceResult> instances) {
  EvalReport r;
  for (const auto& inst : instances) {
    for (std::size_t t = 0; t < inst.gold.size(); ++t) {
      if (!inst.mask[t]) continue;
      if (inst.gold[t] == 1 && inst.pred[t] == 1) ++r.tp;
      else if (inst.gold[t] == 0 && inst.pred[t] == 1) ++r.fp;
      else if (inst.gold[t] == 1 && inst.pred[t] == 0) ++r.fn;
      else ++r.tn;
    }
  }
  r.instances = std::move(instances);
  finalize_metrics(r);
  return r;
}

// Fills literal (and optional contextual) vectors from an embedding space
// under the given OOV policy.
inline std::vector<detector::LabeledSequence> attach_embeddings(
    const MetaphorDataset& ds, const store::EmbeddingSpace& space,
    const store::OovPolicy& policy,
    const detector::ContextualVectors* contextual = nullptr) {
  std::vector<detector::LabeledSequence> out = ds.instances;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& seq = out[i];
    for (auto& tok : seq.tokens)
      tok.literal_vec = store::lookup(space, tok.token, policy);
    if (contextual) {
      auto it = contextual->by_id.find(ds.meta[i].id);
      if (it == contextual->by_id.end())
        throw InvalidArgError("no contextual vectors for instance id " +
                              ds.meta[i].id);
      const auto& block = it->second;
      if (block.size() != seq.tokens.size() *
                              static_cast<std::size_t>(contextual->dim))
        throw ShapeError("contextual block for instance " + ds.meta[i].id +
                         " is not T*dim");
      for (std::size_t t = 0; t < seq.tokens.size(); ++t)
        seq.tokens[t].contextual_vec.assign(
            block.begin() + t * contextual->dim,
            block.begin() + (t + 1) * contextual->dim);
    }
  }
  return out;
}

struct RunConfig {
  detector::DetectorConfig det;
  int folds = 10;
  std::uint64_t seed = 1;
  store::OovPolicy oov{};
  const detector::ContextualVectors* contextual = nullptr;
};

namespace detail {

inline InstanceResult make_instance_result(
    const MetaphorDataset& ds, std::size_t i,
    const detector::Prediction& pred) {
  InstanceResult res;
  res.id = ds.meta[i].id;
  res.genre = ds.meta[i].genre;
  res.gold = ds.instances[i].labels;
  res.mask = ds.instances[i].weight_mask;
  res.pred = pred.labels;
  res.prob = pred.probabilities;
  return res;
}

}  // namespace detail

// MOH-X/TroFi protocol: k-fold cross-validation, one report per fold plus a
// pooled report whose confusion counts are the fold sums. A dataset carrying
// a split column (VUA) instead trains on train, model-selects on dev, and
// emits a single test report.
inline std::vector<EvalReport> run_experiment(const MetaphorDataset& ds,
                                              const store::EmbeddingSpace& space,
                                              const std::string& embedding_id,
                                              RunConfig cfg) {
  cfg.det.d_g = space.dim();
  cfg.det.d_e = cfg.contextual ? cfg.contextual->dim : 0;
  cfg.oov.seed = cfg.oov.seed ? cfg.oov.seed : cfg.seed;
  auto embedded = attach_embeddings(ds, space, cfg.oov, cfg.contextual);

  auto stamp = [&](EvalReport& r, int fold) {
    r.dataset = ds.name;
    r.embedding_id = embedding_id;
    r.model_kind = detector::to_string(cfg.det.kind);
    r.seed = cfg.seed;
    r.fold = fold;
  };

  bool has_split = false;
  for (const auto& m : ds.meta) has_split |= !m.split.empty();

  std::vector<EvalReport> reports;
  if (has_split) {
    std::vector<detector::LabeledSequence> train, dev;
    std::vector<std::size_t> test_idx;
    for (std::size_t i = 0; i < embedded.size(); ++i) {
      const auto& split = ds.meta[i].split;
      if (split == "train") train.push_back(embedded[i]);
      else if (split == "dev") dev.push_back(embedded[i]);
      else if (split == "test") test_idx.push_back(i);
      else
        throw DatasetError("instance " + ds.meta[i].id +
                           ": unknown split '" + split + "'");
    }
    if (train.empty() || test_idx.empty())
      throw InvalidArgError("split dataset needs train and test instances");
    detector::DetectorConfig det = cfg.det;
    det.seed = hash_mix(cfg.seed, 0x5eed);
    auto trained = detector::train_detector(train, dev.empty() ? nullptr : &dev,
                                            det);
    std::vector<detector::LabeledSequence> test;
    for (auto i : test_idx) test.push_back(embedded[i]);
    auto preds = detector::predict(test, trained.params, cfg.det.threshold);
    std::vector<InstanceResult> results;
    for (std::size_t j = 0; j < test_idx.size(); ++j)
      results.push_back(
          detail::make_instance_result(ds, test_idx[j], preds[j]));
    EvalReport report = report_from_instances(std::move(results));
    stamp(report, -1);
    reports.push_back(std::move(report));
    return reports;
  }

  FoldPlan plan = make_folds(ds, cfg.folds, cfg.seed);
  std::vector<InstanceResult> pooled;
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<detector::LabeledSequence> train;
    std::vector<std::size_t> test_idx;
    for (std::size_t i = 0; i < embedded.size(); ++i) {
      if (plan.assignments[i] == f) test_idx.push_back(i);
      else train.push_back(embedded[i]);
    }
    detector::DetectorConfig det = cfg.det;
    det.seed = hash_mix(cfg.seed, 0xf01d + static_cast<std::uint64_t>(f));
    auto trained = detector::train_detector(train, nullptr, det);
    std::vector<detector::LabeledSequence> test;
    for (auto i : test_idx) test.push_back(embedded[i]);
    auto preds = detector::predict(test, trained.params, cfg.det.threshold);
    std::vector<InstanceResult> results;
    for (std::size_t j = 0; j < test_idx.size(); ++j)
      results.push_back(
          detail::make_instance_result(ds, test_idx[j], preds[j]));
    pooled.insert(pooled.end(), results.begin(), results.end());
    EvalReport report = report_from_instances(std::move(results));
    stamp(report, f);
    reports.push_back(std::move(report));
  }
  EvalReport pooled_report = report_from_instances(std::move(pooled));
  stamp(pooled_report, -1);
  reports.push_back(std::move(pooled_report));
  return reports;
}

// ---------------------------------------------------------------------------
// report serialization: one JSON record per line

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["dataset"] = r.dataset;
  j["embedding"] = r.embedding_id;
  j["model"] = r.model_kind;
  j["seed"] = r.seed;
  j["fold"] = r.fold;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["accuracy"] = r.accuracy;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["tn"] = r.tn;
  j["fn"] = r.fn;
  nlohmann::json insts = nlohmann::json::array();
  for (const auto& inst : r.instances) {
    nlohmann::json ji;
    ji["id"] = inst.id;
    if (!inst.genre.empty()) ji["genre"] = inst.genre;
    ji["gold"] = inst.gold;
    ji["mask"] = inst.mask;
    ji["pred"] = inst.pred;
    ji["prob"] = inst.prob;
    insts.push_back(std::move(ji));
  }
  j["instances"] = std::move(insts);
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.dataset = j.value("dataset", "");
  r.embedding_id = j.value("embedding", "");
  r.model_kind = j.value("model", "");
  r.seed = j.value("seed", 0ull);
  r.fold = j.value("fold", -1);
  r.precision = j.value("precision", 0.0);
  r.recall = j.value("recall", 0.0);
  r.f1 = j.value("f1", 0.0);
  r.accuracy = j.value("accuracy", 0.0);
  r.tp = j.value("tp", 0l);
  r.fp = j.value("fp", 0l);
  r.tn = j.value("tn", 0l);
  r.fn = j.value("fn", 0l);
  for (const auto& ji : j.value("instances", nlohmann::json::array())) {
    InstanceResult inst;
    inst.id = ji.value("id", "");
    inst.genre = ji.value("genre", "");
    inst.gold = ji.value("gold", std::vector<int>{});
    inst.mask = ji.value("mask", std::vector<int>{});
    inst.pred = ji.value("pred", std::vector<int>{});
    inst.prob = ji.value("prob", std::vector<double>{});
    r.instances.push_back(std::move(inst));
  }
  return r;
}

inline void write_reports_jsonl(const std::vector<EvalReport>& reports,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgError("cannot write reports: " + path);
  for (const auto& r : reports) out << to_json(r).dump() << '\n';
}

inline std::vector<EvalReport> load_reports_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgError("cannot open reports: " + path);
  std::vector<EvalReport> reports;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    reports.push_back(report_from_json(nlohmann::json::parse(line)));
  }
  return reports;
}

// fixed-width summary, one row per report
inline std::string summary_table(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << "dataset      model     embedding                        fold   P      R      F1     acc\n";
  char buf[256];
  for (const auto& r : reports) {
    std::string fold = r.fold < 0 ? "all" : std::to_string(r.fold);
    std::snprintf(buf, sizeof(buf),
                  "%-12s %-9s %-32s %-6s %.4f %.4f %.4f %.4f\n",
                  r.dataset.c_str(), r.model_kind.c_str(),
                  r.embedding_id.c_str(), fold.c_str(), r.precision, r.recall,
                  r.f1, r.accuracy);
    os << buf;
  }
  return os.str();
}

}  // namespace tembed::eval
