#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "tembed/corpus.hpp"
#include "tembed/errors.hpp"
#include "tembed/rng.hpp"
#include "tembed/store.hpp"

namespace tembed::sgns {

struct SgnsConfig {
  int dim = 300;            // matches the common historical-embedding dim
  int window = 5;           // max context offset; shrinks dynamically
  int negatives = 5;        // negative samples per positive pair
  int epochs = 5;
  double initial_lr = 0.025;
  int min_count = 5;
  double subsample_t = 1e-4;  // 0 disables frequent-word subsampling
  std::uint64_t seed = 1;
  int workers = 1;  // >1: lock-free shared updates, nondeterministic
};

struct Vocab {
  std::vector<std::string> words;   // descending count, ties lexicographic
  std::vector<std::int64_t> counts;
  std::vector<double> unigram_probs;  // proportional to count^0.75, sums to 1
  std::unordered_map<std::string, std::int32_t> index;
  std::int64_t total_tokens = 0;

  std::size_t size() const { return words.size(); }

  std::int32_t id_of(const std::string& w) const {
    auto it = index.find(w);
    return it == index.end() ? -1 : it->second;
  }
};

struct SgnsModel {
  Vocab vocab;
  std::vector<float> target;   // |V| x dim; rows are the published vectors
  std::vector<float> context;  // |V| x dim
  int dim = 0;
  bool frozen_context = false;

  std::span<const float> target_row(std::size_t i) const {
    return {target.data() + i * static_cast<std::size_t>(dim),
            static_cast<std::size_t>(dim)};
  }
};

// Context matrix plus the vocabulary it is indexed by; slice training against
// a compass passes this in.
struct FrozenContext {
  const Vocab* vocab = nullptr;
  const std::vector<float>* context = nullptr;
  int dim = 0;
};

namespace detail {

inline void finalize_vocab(Vocab& v) {
  v.index.clear();
  v.index.reserve(v.words.size());
  for (std::size_t i = 0; i < v.words.size(); ++i)
    v.index.emplace(v.words[i], static_cast<std::int32_t>(i));
  v.total_tokens = 0;
  for (auto c : v.counts) v.total_tokens += c;
  v.unigram_probs.assign(v.words.size(), 0.0);
  double mass = 0.0;
  for (std::size_t i = 0; i < v.counts.size(); ++i) {
    v.unigram_probs[i] = std::pow(static_cast<double>(v.counts[i]), 0.75);
    mass += v.unigram_probs[i];
  }
  if (mass > 0.0)
    for (auto& p : v.unigram_probs) p /= mass;
}

// Vose alias sampler; zero-weight entries are never returned.
class AliasSampler {
 public:
  AliasSampler() = default;

  explicit AliasSampler(const std::vector<double>& weights) {
    const std::size_t n = weights.size();
    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) throw EmptyVocabError("sampler has no positive weights");
    std::vector<double> scaled(n);
    std::vector<std::size_t> small, large;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = weights[i] / total * static_cast<double>(n);
      (scaled[i] < 1.0 ? small : large).push_back(i);
    }
    while (!small.empty() && !large.empty()) {
      std::size_t s = small.back(), l = large.back();
      small.pop_back();
      large.pop_back();
      prob_[s] = scaled[s];
      alias_[s] = static_cast<std::int32_t>(l);
      scaled[l] = scaled[l] + scaled[s] - 1.0;
      (scaled[l] < 1.0 ? small : large).push_back(l);
    }
    for (std::size_t s : large) prob_[s] = 1.0;
    for (std::size_t s : small) prob_[s] = 1.0;
  }

  std::int32_t sample(Rng& rng) const {
    std::size_t i = static_cast<std::size_t>(rng.bounded(prob_.size()));
    return rng.uniform() < prob_[i] ? static_cast<std::int32_t>(i) : alias_[i];
  }

 private:
  std::vector<double> prob_;
  std::vector<std::int32_t> alias_;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

// Words below min_count are dropped; order is descending count with
// lexicographic tie-breaking.
inline Vocab build_vocab(const corpus::TimeSlice& slice,
                         const SgnsConfig& cfg) {
  std::unordered_map<std::string, std::int64_t> counts;
  for (const auto& sent : slice.sentences)
    for (const auto& tok : sent) ++counts[tok];
  std::vector<std::pair<std::string, std::int64_t>> kept;
  for (auto& [w, c] : counts)
    if (c >= cfg.min_count) kept.emplace_back(w, c);
  if (kept.empty())
    throw EmptyVocabError("no word reaches min_count " +
                          std::to_string(cfg.min_count));
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  v.words.reserve(kept.size());
  v.counts.reserve(kept.size());
  for (auto& [w, c] : kept) {
    v.words.push_back(w);
    v.counts.push_back(c);
  }
  detail::finalize_vocab(v);
  return v;
}

// Vocabulary over an externally supplied word list (for example the words of
// a stored context-matrix embedding); counts default to 1.
inline Vocab vocab_from_words(std::vector<std::string> words) {
  Vocab v;
  v.words = std::move(words);
  v.counts.assign(v.words.size(), 1);
  detail::finalize_vocab(v);
  return v;
}

// Shared word list with counts recounted from a specific corpus (frozen-mode
// slice training: the compass imposes the words, the slice supplies the
// usage statistics).
inline Vocab vocab_with_slice_counts(const Vocab& shared,
                                     const corpus::TimeSlice& slice) {
  Vocab v;
  v.words = shared.words;
  v.counts.assign(v.words.size(), 0);
  for (const auto& sent : slice.sentences)
    for (const auto& tok : sent) {
      auto id = shared.id_of(tok);
      if (id >= 0) ++v.counts[static_cast<std::size_t>(id)];
    }
  detail::finalize_vocab(v);
  return v;
}

// Pairwise negative-sampling objective for one (center, context, negatives)
// draw, in double precision:
//   J = log sigmoid(u . v_pos) + sum_k log sigmoid(-(u . v_neg_k))
// The trainer ascends this; gradients below are of J.
inline double pair_objective(std::span<const double> u,
                             std::span<const double> v_pos,
                             const std::vector<std::vector<double>>& v_negs) {
  auto dotd = [](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  double j = std::log(detail::sigmoid(dotd(u, v_pos)));
  for (const auto& vn : v_negs)
    j += std::log(detail::sigmoid(-dotd(u, std::span<const double>(vn))));
  return j;
}

inline void pair_gradients(std::span<const double> u,
                           std::span<const double> v_pos,
                           const std::vector<std::vector<double>>& v_negs,
                           std::vector<double>& grad_u,
                           std::vector<double>& grad_v_pos,
                           std::vector<std::vector<double>>& grad_v_negs) {
  const std::size_t d = u.size();
  auto dotd = [](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  grad_u.assign(d, 0.0);
  grad_v_pos.assign(d, 0.0);
  grad_v_negs.assign(v_negs.size(), std::vector<double>(d, 0.0));
  double g_pos = 1.0 - detail::sigmoid(dotd(u, v_pos));
  for (std::size_t i = 0; i < d; ++i) {
    grad_u[i] += g_pos * v_pos[i];
    grad_v_pos[i] = g_pos * u[i];
  }
  for (std::size_t k = 0; k < v_negs.size(); ++k) {
    double g_neg = -detail::sigmoid(dotd(u, std::span<const double>(v_negs[k])));
    for (std::size_t i = 0; i < d; ++i) {
      grad_u[i] += g_neg * v_negs[k][i];
      grad_v_negs[k][i] = g_neg * u[i];
    }
  }
}

namespace detail {

struct TrainState {
  const SgnsConfig* cfg = nullptr;
  const Vocab* vocab = nullptr;
  std::vector<std::vector<std::int32_t>> sentences;  // in-vocab token ids
  std::int64_t corpus_tokens = 0;  // in-vocab tokens per epoch, drives lr decay
  AliasSampler negative_sampler;
  std::vector<double> keep_prob;  // frequent-word subsampling
  float* target = nullptr;
  float* context = nullptr;
  bool frozen = false;
  std::atomic<std::int64_t> processed{0};
};

inline void train_range(TrainState& st, std::size_t first, std::size_t last,
                        Rng rng) {
  const SgnsConfig& cfg = *st.cfg;
  const int dim = cfg.dim;
  const double planned = static_cast<double>(cfg.epochs) *
                             static_cast<double>(st.corpus_tokens) +
                         1.0;
  std::vector<float> acc(dim);
  std::vector<std::int32_t> kept;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t s = first; s < last; ++s) {
      const auto& sent = st.sentences[s];
      kept.clear();
      for (std::int32_t id : sent) {
        st.processed.fetch_add(1, std::memory_order_relaxed);
        if (cfg.subsample_t > 0.0 &&
            rng.uniform() >= st.keep_prob[static_cast<std::size_t>(id)])
          continue;
        kept.push_back(id);
      }
      if (kept.size() < 2) continue;

      double frac = static_cast<double>(
                        st.processed.load(std::memory_order_relaxed)) /
                    planned;
      double lr = cfg.initial_lr * (1.0 - frac);
      if (lr < cfg.initial_lr * 1e-4) lr = cfg.initial_lr * 1e-4;

      for (std::size_t pos = 0; pos < kept.size(); ++pos) {
        const std::int32_t center = kept[pos];
        float* u = st.target + static_cast<std::size_t>(center) * dim;
        // dynamic window: uniform in [1, window]
        const int b = 1 + static_cast<int>(rng.bounded(
                              static_cast<std::uint64_t>(cfg.window)));
        for (int off = -b; off <= b; ++off) {
          if (off == 0) continue;
          const std::int64_t j = static_cast<std::int64_t>(pos) + off;
          if (j < 0 || j >= static_cast<std::int64_t>(kept.size())) continue;
          const std::int32_t ctx = kept[static_cast<std::size_t>(j)];

          std::fill(acc.begin(), acc.end(), 0.0f);
          for (int k = 0; k <= cfg.negatives; ++k) {
            std::int32_t tgt;
            double label;
            if (k == 0) {
              tgt = ctx;
              label = 1.0;
            } else {
              tgt = st.negative_sampler.sample(rng);
              if (tgt == ctx) continue;
              label = 0.0;
            }
            float* v = st.context + static_cast<std::size_t>(tgt) * dim;
            double f = 0.0;
            for (int i = 0; i < dim; ++i)
              f += static_cast<double>(u[i]) * static_cast<double>(v[i]);
            const float g = static_cast<float>((label - sigmoid(f)) * lr);
            for (int i = 0; i < dim; ++i) acc[i] += g * v[i];
            if (!st.frozen)
              for (int i = 0; i < dim; ++i) v[i] += g * u[i];
          }
          for (int i = 0; i < dim; ++i) u[i] += acc[i];
        }
      }
    }
  }
}

inline SgnsModel train_with_vocab(const corpus::TimeSlice& slice,
                                  const SgnsConfig& cfg, Vocab vocab,
                                  const FrozenContext* frozen) {
  if (cfg.dim < 2 || cfg.window < 1 || cfg.negatives < 1 || cfg.epochs < 1)
    throw InvalidArgError("sgns config: dim>=2, window>=1, negatives>=1, "
                          "epochs>=1 required");

  TrainState st;
  st.cfg = &cfg;
  st.vocab = &vocab;
  st.frozen = frozen != nullptr;

  for (const auto& sent : slice.sentences) {
    std::vector<std::int32_t> ids;
    ids.reserve(sent.size());
    for (const auto& tok : sent) {
      auto id = vocab.id_of(tok);
      if (id >= 0) ids.push_back(id);
    }
    st.corpus_tokens += static_cast<std::int64_t>(ids.size());
    st.sentences.push_back(std::move(ids));
  }
  if (st.corpus_tokens == 0)
    throw EmptyVocabError("corpus contains no in-vocabulary tokens");

  st.negative_sampler = AliasSampler(vocab.unigram_probs);
  st.keep_prob.assign(vocab.size(), 1.0);
  if (cfg.subsample_t > 0.0) {
    const double total = static_cast<double>(vocab.total_tokens);
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      if (vocab.counts[i] <= 0) continue;
      const double f = static_cast<double>(vocab.counts[i]) / total;
      const double keep =
          (std::sqrt(f / cfg.subsample_t) + 1.0) * cfg.subsample_t / f;
      st.keep_prob[i] = std::min(1.0, keep);
    }
  }

  SgnsModel model;
  model.dim = cfg.dim;
  model.frozen_context = st.frozen;
  const std::size_t cells = vocab.size() * static_cast<std::size_t>(cfg.dim);
  model.target.resize(cells);
  Rng init_rng(hash_mix(cfg.seed, 0x696e6974));  // "init"
  const double half = 0.5 / cfg.dim;
  for (auto& x : model.target)
    x = static_cast<float>(init_rng.uniform(-half, half));
  if (frozen) {
    if (frozen->dim != cfg.dim)
      throw DimMismatchError("frozen context dim " +
                             std::to_string(frozen->dim) +
                             " != configured dim " + std::to_string(cfg.dim));
    if (frozen->context->size() != cells)
      throw DimMismatchError("frozen context matrix size mismatch");
    model.context = *frozen->context;
  } else {
    model.context.assign(cells, 0.0f);
  }
  model.vocab = std::move(vocab);

  st.target = model.target.data();
  st.context = model.context.data();

  if (cfg.workers <= 1) {
    train_range(st, 0, st.sentences.size(), Rng(hash_mix(cfg.seed, 1)));
  } else {
    // Lock-free shared updates; races on matrix cells are tolerated and the
    // result is nondeterministic.
    std::vector<std::thread> threads;
    const std::size_t n = st.sentences.size();
    const std::size_t chunk = (n + cfg.workers - 1) / cfg.workers;
    for (int w = 0; w < cfg.workers; ++w) {
      std::size_t first = std::min(n, static_cast<std::size_t>(w) * chunk);
      std::size_t last = std::min(n, first + chunk);
      if (first >= last) break;
      threads.emplace_back(train_range, std::ref(st), first, last,
                           Rng(hash_mix(cfg.seed, 1 + w)));
    }
    for (auto& t : threads) t.join();
  }
  return model;
}

}  // namespace detail

// Plain SGNS training on one corpus (vocabulary built from it), or, with
// `frozen` given, compass-mode slice training: the shared vocabulary and the
// context matrix come from the compass, only target rows are updated, and the
// context matrix is returned bit-identical.
inline SgnsModel train(const corpus::TimeSlice& slice, const SgnsConfig& cfg,
                       const FrozenContext* frozen = nullptr) {
  if (frozen) {
    if (frozen->dim != cfg.dim)
      throw DimMismatchError("frozen context dim " +
                             std::to_string(frozen->dim) +
                             " != configured dim " + std::to_string(cfg.dim));
    return detail::train_with_vocab(
        slice, cfg, vocab_with_slice_counts(*frozen->vocab, slice), frozen);
  }
  return detail::train_with_vocab(slice, cfg, build_vocab(slice, cfg), nullptr);
}

struct CompassResult {
  SgnsModel compass;
  std::vector<SgnsModel> slices;  // same order as the input slices
};

// The compass trains on the concatenation of all slices; each slice then
// trains its target matrix against the compass's frozen context matrix. All
// slice models end up in one comparable coordinate system.
inline CompassResult train_compass(const std::vector<corpus::TimeSlice>& slices,
                                   const SgnsConfig& cfg) {
  if (slices.size() < 2)
    throw InvalidArgError("train_compass: need at least 2 slices");
  CompassResult result;
  result.compass = train(corpus::concat_slices(slices), cfg);
  for (std::size_t i = 0; i < slices.size(); ++i) {
    FrozenContext frozen{&result.compass.vocab, &result.compass.context,
                         result.compass.dim};
    SgnsConfig slice_cfg = cfg;
    slice_cfg.seed = hash_mix(cfg.seed, 0x736c6963 + i);  // "slic" + i
    result.slices.push_back(train(slices[i], slice_cfg, &frozen));
  }
  return result;
}

inline store::EmbeddingSpace to_embedding_space(
    const SgnsModel& model, const std::string& label,
    bool context_matrix = false) {
  std::map<std::string, std::string> meta;
  meta["slice"] = label;
  return store::EmbeddingSpace(
      model.vocab.words, context_matrix ? model.context : model.target,
      model.dim, std::move(meta));
}

}  // namespace tembed::sgns
