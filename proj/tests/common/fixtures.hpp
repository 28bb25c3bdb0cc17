#pragma once

// synthetic corpora and embedding fixtures shared by the unit and acceptance
// suites

#include <string>
#include <vector>

#include "tembed/corpus.hpp"
#include "tembed/detector.hpp"
#include "tembed/rng.hpp"
#include "tembed/store.hpp"

namespace fixtures {

// Two disjoint topic clusters: words of a cluster co-occur only with words of
// the same cluster.
inline tembed::corpus::TimeSlice two_cluster_corpus(int words_per_cluster,
                                                    int sentences_per_cluster,
                                                    int sentence_len,
                                                    std::uint64_t seed) {
  tembed::Rng rng(seed);
  tembed::corpus::TimeSlice slice{"fixture", {}};
  for (int cluster = 0; cluster < 2; ++cluster) {
    const char prefix = cluster == 0 ? 'a' : 'b';
    for (int s = 0; s < sentences_per_cluster; ++s) {
      std::vector<std::string> sent;
      for (int t = 0; t < sentence_len; ++t)
        sent.push_back(prefix + std::to_string(rng.bounded(
                                    static_cast<std::uint64_t>(words_per_cluster))));
      slice.sentences.push_back(std::move(sent));
    }
  }
  return slice;
}

// Two decade slices sharing a filler vocabulary, each with its own topical
// words; suits compass training (shared vocab across slices).
inline std::vector<tembed::corpus::TimeSlice> two_slice_corpus(
    std::uint64_t seed) {
  tembed::Rng rng(seed);
  std::vector<std::string> shared;
  for (int i = 0; i < 6; ++i) shared.push_back("s" + std::to_string(i));
  std::vector<tembed::corpus::TimeSlice> slices;
  for (int sl = 0; sl < 2; ++sl) {
    tembed::corpus::TimeSlice slice{sl == 0 ? "1980" : "1990", {}};
    const char prefix = sl == 0 ? 'x' : 'y';
    for (int s = 0; s < 160; ++s) {
      std::vector<std::string> sent;
      for (int t = 0; t < 7; ++t) {
        if (rng.uniform() < 0.5)
          sent.push_back(shared[rng.bounded(shared.size())]);
        else
          sent.push_back(prefix + std::to_string(rng.bounded(8)));
      }
      slice.sentences.push_back(std::move(sent));
    }
    slices.push_back(std::move(slice));
  }
  return slices;
}

// Deterministic random token embedding for detector fixtures.
inline std::vector<float> token_vector(const std::string& token, int dim,
                                       std::uint64_t seed) {
  tembed::Rng rng(tembed::hash_mix(tembed::fnv1a(token), seed));
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

// 20 sentences over a small vocabulary; a token is metaphorical exactly when
// it belongs to the marker list. Every position is masked in.
inline std::vector<tembed::detector::LabeledSequence> marker_word_fixture(
    int dim, std::uint64_t seed) {
  const std::vector<std::string> markers = {"blaze", "storm", "flood"};
  const std::vector<std::string> plain = {"walk", "stone", "river", "lamp",
                                          "chair", "bread", "cloud"};
  tembed::Rng rng(seed);
  std::vector<tembed::detector::LabeledSequence> out;
  for (int s = 0; s < 20; ++s) {
    tembed::detector::LabeledSequence seq;
    const int len = 4 + static_cast<int>(rng.bounded(4));
    for (int t = 0; t < len; ++t) {
      const bool marker = rng.uniform() < 0.35;
      const std::string& tok =
          marker ? markers[rng.bounded(markers.size())]
                 : plain[rng.bounded(plain.size())];
      seq.tokens.push_back(
          {tok, token_vector(tok, dim, 0xfeed), {}});
      seq.labels.push_back(marker ? 1 : 0);
      seq.weight_mask.push_back(1);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace fixtures
