#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tembed/errors.hpp"
#include "tembed/eval.hpp"
#include "tembed/store.hpp"

namespace tembed::analysis {

struct SpaceNeighbors {
  std::string space_name;
  bool absent = false;
  std::vector<std::pair<std::string, double>> neighbors;  // descending cosine
};

struct DriftRecord {
  std::string word;
  std::size_t k = 0;
  std::vector<SpaceNeighbors> per_space;
  // pairwise Jaccard overlap of neighbor word sets; 0 when either side is
  // absent, 1 on the diagonal for present spaces
  std::vector<std::vector<double>> jaccard;
};

// Nearest-neighbor comparison of one word across named spaces. A space that
// lacks the word gets an "absent" marker; the word must exist in at least one
// space.
inline DriftRecord neighbor_drift(
    const std::string& word,
    const std::vector<std::pair<std::string, const store::EmbeddingSpace*>>&
        spaces,
    std::size_t k = 10) {
  if (spaces.empty()) throw InvalidArgError("neighbor_drift: no spaces given");
  DriftRecord rec;
  rec.word = word;
  rec.k = k;
  bool anywhere = false;
  for (const auto& [name, space] : spaces) {
    SpaceNeighbors sn;
    sn.space_name = name;
    if (!space->contains(word)) {
      sn.absent = true;
    } else {
      sn.neighbors = store::nearest_neighbors(*space, word, k);
      anywhere = true;
    }
    rec.per_space.push_back(std::move(sn));
  }
  if (!anywhere)
    throw OovError("word '" + word + "' is absent from every space");

  const std::size_t n = rec.per_space.size();
  rec.jaccard.assign(n, std::vector<double>(n, 0.0));
  std::vector<std::set<std::string>> sets(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& [w, _] : rec.per_space[i].neighbors) sets[i].insert(w);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (rec.per_space[i].absent || rec.per_space[j].absent) continue;
      if (i == j) {
        rec.jaccard[i][j] = 1.0;
        continue;
      }
      std::size_t inter = 0;
      for (const auto& w : sets[i]) inter += sets[j].count(w);
      const std::size_t uni = sets[i].size() + sets[j].size() - inter;
      rec.jaccard[i][j] = uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
    }
  }
  return rec;
}

// CSV: space,rank,neighbor,cosine rows, then jaccard,space_a,space_b,value
inline std::string drift_to_csv(const DriftRecord& rec) {
  std::ostringstream os;
  os << "section,space,rank_or_space_b,neighbor,cosine\n";
  char buf[64];
  for (const auto& sn : rec.per_space) {
    if (sn.absent) {
      os << "neighbors," << csv::quote(sn.space_name) << ",,ABSENT,\n";
      continue;
    }
    for (std::size_t r = 0; r < sn.neighbors.size(); ++r) {
      std::snprintf(buf, sizeof(buf), "%.6f", sn.neighbors[r].second);
      os << "neighbors," << csv::quote(sn.space_name) << ',' << r + 1 << ','
         << csv::quote(sn.neighbors[r].first) << ',' << buf << '\n';
    }
  }
  for (std::size_t i = 0; i < rec.per_space.size(); ++i)
    for (std::size_t j = i + 1; j < rec.per_space.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.6f", rec.jaccard[i][j]);
      os << "jaccard," << csv::quote(rec.per_space[i].space_name) << ','
         << csv::quote(rec.per_space[j].space_name) << ",," << buf << '\n';
    }
  return os.str();
}

struct RunDiff {
  std::vector<std::string> only_a_correct;  // instance ids
  std::vector<std::string> only_b_correct;
  double agreement_rate = 0.0;
  // genre -> (only-A-correct count, only-B-correct count); filled when genre
  // metadata exists
  std::map<std::string, std::pair<long, long>> per_genre;
};

namespace detail {

// an instance counts as correct when every masked position is right
inline bool instance_correct(const eval::InstanceResult& inst) {
  for (std::size_t t = 0; t < inst.gold.size(); ++t)
    if (inst.mask[t] && inst.pred[t] != inst.gold[t]) return false;
  return true;
}

}  // namespace detail

// Exclusive-correct sets between two runs over the same instances.
inline RunDiff diff_runs(const eval::EvalReport& a, const eval::EvalReport& b) {
  std::map<std::string, const eval::InstanceResult*> by_id_b;
  for (const auto& inst : b.instances) by_id_b[inst.id] = &inst;
  if (a.instances.size() != b.instances.size())
    throw DatasetError("diff_runs: reports cover different instance counts");
  RunDiff diff;
  std::size_t agree = 0;
  for (const auto& ia : a.instances) {
    auto it = by_id_b.find(ia.id);
    if (it == by_id_b.end())
      throw DatasetError("diff_runs: instance id '" + ia.id +
                         "' missing from run B");
    const bool ca = detail::instance_correct(ia);
    const bool cb = detail::instance_correct(*it->second);
    if (ca == cb) ++agree;
    if (ca && !cb) {
      diff.only_a_correct.push_back(ia.id);
      if (!ia.genre.empty()) diff.per_genre[ia.genre].first += 1;
    } else if (cb && !ca) {
      diff.only_b_correct.push_back(ia.id);
      if (!ia.genre.empty()) diff.per_genre[ia.genre].second += 1;
    }
  }
  diff.agreement_rate =
      a.instances.empty()
          ? 1.0
          : static_cast<double>(agree) / static_cast<double>(a.instances.size());
  std::sort(diff.only_a_correct.begin(), diff.only_a_correct.end());
  std::sort(diff.only_b_correct.begin(), diff.only_b_correct.end());
  return diff;
}

// Metrics restricted per genre; genres with no masked tokens in the report
// come back with zeroed counts. Joins report instances to dataset genre
// metadata by instance id.
inline std::vector<std::pair<std::string, eval::EvalReport>> genre_breakdown(
    const eval::EvalReport& report, const eval::MetaphorDataset& ds) {
  bool any_genre = false;
  std::map<std::string, std::string> genre_by_id;
  std::set<std::string> genres;
  for (const auto& m : ds.meta) {
    if (!m.genre.empty()) {
      any_genre = true;
      genres.insert(m.genre);
    }
    genre_by_id[m.id] = m.genre;
  }
  if (!any_genre)
    throw DatasetError("genre_breakdown: dataset has no genre metadata");

  std::map<std::string, std::vector<eval::InstanceResult>> grouped;
  for (const auto& g : genres) grouped[g] = {};
  for (const auto& inst : report.instances) {
    auto it = genre_by_id.find(inst.id);
    if (it == genre_by_id.end())
      throw DatasetError("genre_breakdown: instance id '" + inst.id +
                         "' not in dataset");
    if (it->second.empty()) continue;
    grouped[it->second].push_back(inst);
  }
  std::vector<std::pair<std::string, eval::EvalReport>> out;
  for (auto& [genre, insts] : grouped) {
    eval::EvalReport sub = eval::report_from_instances(std::move(insts));
    sub.dataset = report.dataset;
    sub.embedding_id = report.embedding_id;
    sub.model_kind = report.model_kind;
    sub.seed = report.seed;
    sub.fold = report.fold;
    out.emplace_back(genre, std::move(sub));
  }
  return out;
}

// Frequent (POS tag, token position) patterns among correctly identified
// metaphors. Needs a POS column in the dataset; returns nullopt when none is
// present so callers can skip with a notice.
inline std::optional<std::vector<std::pair<std::string, long>>>
pos_position_patterns(const eval::EvalReport& report,
                      const eval::MetaphorDataset& ds,
                      std::size_t top_n = 20) {
  std::map<std::string, std::size_t> index_by_id;
  bool any_pos = false;
  for (std::size_t i = 0; i < ds.meta.size(); ++i) {
    index_by_id[ds.meta[i].id] = i;
    any_pos |= !ds.meta[i].pos.empty();
  }
  if (!any_pos) return std::nullopt;

  std::map<std::string, long> counts;
  for (const auto& inst : report.instances) {
    auto it = index_by_id.find(inst.id);
    if (it == index_by_id.end()) continue;
    const auto& pos = ds.meta[it->second].pos;
    if (pos.size() != inst.gold.size()) continue;
    for (std::size_t t = 0; t < inst.gold.size(); ++t) {
      if (!inst.mask[t] || inst.gold[t] != 1 || inst.pred[t] != 1) continue;
      counts[pos[t] + "@" + std::to_string(t)] += 1;
    }
  }
  std::vector<std::pair<std::string, long>> out(counts.begin(), counts.end());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (out.size() > top_n) out.resize(top_n);
  return out;
}

}  // namespace tembed::analysis
