#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "../common/fixtures.hpp"
#include "tembed/corpus.hpp"
#include "tembed/rng.hpp"
#include "tembed/sgns.hpp"

using namespace tembed;
using corpus::TimeSlice;
using sgns::SgnsConfig;

namespace {

SgnsConfig small_config() {
  SgnsConfig cfg;
  cfg.dim = 16;
  cfg.window = 3;
  cfg.negatives = 4;
  cfg.epochs = 8;
  cfg.min_count = 1;
  cfg.subsample_t = 0;  // keep tiny corpora intact
  cfg.seed = 42;
  return cfg;
}

double cosine_rows(const sgns::SgnsModel& m, std::int32_t a, std::int32_t b) {
  auto ra = m.target_row(static_cast<std::size_t>(a));
  auto rb = m.target_row(static_cast<std::size_t>(b));
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    d += static_cast<double>(ra[i]) * rb[i];
    na += static_cast<double>(ra[i]) * ra[i];
    nb += static_cast<double>(rb[i]) * rb[i];
  }
  return d / (std::sqrt(na) * std::sqrt(nb));
}

// Independent objective evaluation over the whole corpus: full window, no
// subsampling, negatives drawn by cumulative scan over the unigram
// distribution (not the trainer's sampler).
double corpus_objective(const sgns::SgnsModel& m, const TimeSlice& slice,
                        int window, int negatives, std::uint64_t seed,
                        long* term_count = nullptr) {
  Rng rng(seed);
  auto sample_negative = [&]() {
    double u = rng.uniform();
    double acc = 0;
    for (std::size_t i = 0; i < m.vocab.unigram_probs.size(); ++i) {
      acc += m.vocab.unigram_probs[i];
      if (u < acc) return static_cast<std::int32_t>(i);
    }
    return static_cast<std::int32_t>(m.vocab.size() - 1);
  };
  auto dot_tc = [&](std::int32_t t, std::int32_t c) {
    double s = 0;
    const float* u = m.target.data() + static_cast<std::size_t>(t) * m.dim;
    const float* v = m.context.data() + static_cast<std::size_t>(c) * m.dim;
    for (int i = 0; i < m.dim; ++i) s += static_cast<double>(u[i]) * v[i];
    return s;
  };
  auto log_sigmoid = [](double x) { return -std::log1p(std::exp(-x)); };

  double j = 0;
  long terms = 0;
  for (const auto& sent : slice.sentences) {
    std::vector<std::int32_t> ids;
    for (const auto& tok : sent) {
      auto id = m.vocab.id_of(tok);
      if (id >= 0) ids.push_back(id);
    }
    for (std::size_t pos = 0; pos < ids.size(); ++pos) {
      for (int off = -window; off <= window; ++off) {
        if (off == 0) continue;
        const std::int64_t jj = static_cast<std::int64_t>(pos) + off;
        if (jj < 0 || jj >= static_cast<std::int64_t>(ids.size())) continue;
        ++terms;
        j += log_sigmoid(dot_tc(ids[pos], ids[static_cast<std::size_t>(jj)]));
        for (int k = 0; k < negatives; ++k)
          j += log_sigmoid(-dot_tc(ids[pos], sample_negative()));
      }
    }
  }
  if (term_count) *term_count = terms;
  return j;
}

}  // namespace

TEST_CASE("build_vocab applies min_count", "[sgns]") {
  TimeSlice slice{"t", {{"a", "a", "b"}}};
  auto cfg = small_config();
  cfg.min_count = 2;
  auto vocab = sgns::build_vocab(slice, cfg);
  REQUIRE(vocab.size() == 1);
  CHECK(vocab.words[0] == "a");
  CHECK(vocab.counts[0] == 2);
}

TEST_CASE("build_vocab breaks count ties lexicographically", "[sgns]") {
  TimeSlice slice{"t", {{"b", "a", "a", "b"}}};
  auto vocab = sgns::build_vocab(slice, small_config());
  REQUIRE(vocab.size() == 2);
  CHECK(vocab.words[0] == "a");
  CHECK(vocab.words[1] == "b");
}

TEST_CASE("build_vocab raises when nothing survives", "[sgns]") {
  TimeSlice slice{"t", {{"x"}}};
  auto cfg = small_config();
  cfg.min_count = 2;
  CHECK_THROWS_AS(sgns::build_vocab(slice, cfg), EmptyVocabError);
}

TEST_CASE("unigram distribution normalizes to one", "[sgns]") {
  auto slice = fixtures::two_cluster_corpus(10, 40, 6, 5);
  auto vocab = sgns::build_vocab(slice, small_config());
  double sum = 0;
  for (double p : vocab.unigram_probs) sum += p;
  CHECK(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("trained matrices have |V| x dim shape", "[sgns]") {
  // exactly 100 distinct words, each frequent enough
  TimeSlice slice{"t", {}};
  Rng rng(3);
  for (int s = 0; s < 200; ++s) {
    std::vector<std::string> sent;
    for (int t = 0; t < 6; ++t)
      sent.push_back("w" + std::to_string(rng.bounded(100)));
    slice.sentences.push_back(std::move(sent));
  }
  auto cfg = small_config();
  cfg.dim = 50;
  cfg.epochs = 1;
  auto model = sgns::train(slice, cfg);
  REQUIRE(model.vocab.size() == 100);
  CHECK(model.target.size() == 100 * 50);
  CHECK(model.context.size() == 100 * 50);
  for (float x : model.target) CHECK(std::isfinite(x));
}

TEST_CASE("frozen context matrix is returned bit-identical", "[sgns]") {
  auto slices = fixtures::two_slice_corpus(17);
  auto cfg = small_config();
  auto compass = sgns::train(corpus::concat_slices(slices), cfg);

  sgns::FrozenContext frozen{&compass.vocab, &compass.context, compass.dim};
  auto slice_model = sgns::train(slices[0], cfg, &frozen);
  CHECK(slice_model.frozen_context);
  REQUIRE(slice_model.context.size() == compass.context.size());
  CHECK(std::memcmp(slice_model.context.data(), compass.context.data(),
                    compass.context.size() * sizeof(float)) == 0);
  // targets did move
  CHECK(slice_model.target != compass.target);
}

TEST_CASE("frozen dim mismatch raises", "[sgns]") {
  auto slices = fixtures::two_slice_corpus(18);
  auto cfg = small_config();
  auto compass = sgns::train(corpus::concat_slices(slices), cfg);
  sgns::FrozenContext frozen{&compass.vocab, &compass.context, compass.dim};
  auto bad = cfg;
  bad.dim = cfg.dim + 2;
  CHECK_THROWS_AS(sgns::train(slices[0], bad, &frozen), DimMismatchError);
}

TEST_CASE("training is bit-reproducible under a fixed seed", "[sgns]") {
  auto slice = fixtures::two_cluster_corpus(8, 60, 6, 23);
  auto cfg = small_config();
  cfg.epochs = 3;
  auto m1 = sgns::train(slice, cfg);
  auto m2 = sgns::train(slice, cfg);
  CHECK(m1.target == m2.target);
  CHECK(m1.context == m2.context);
}

TEST_CASE("one epoch of training raises the corpus objective", "[sgns]") {
  auto slice = fixtures::two_cluster_corpus(10, 80, 7, 29);
  auto cfg = small_config();
  cfg.epochs = 1;
  auto model = sgns::train(slice, cfg);

  long terms = 0;
  const double j_end = corpus_objective(model, slice, cfg.window,
                                        cfg.negatives, 99, &terms);
  // at initialization the context matrix is zero, so every sigmoid argument
  // is 0 and the objective is exactly terms*(negatives+1)*log(1/2)
  const double j_start =
      static_cast<double>(terms) * (cfg.negatives + 1) * std::log(0.5);
  CHECK(j_end > j_start);
}

TEST_CASE("pairwise gradients match finite differences", "[sgns]") {
  Rng rng(20240801);
  const int dim = 12;
  for (int draw = 0; draw < 20; ++draw) {
    std::vector<double> u(dim), v_pos(dim);
    std::vector<std::vector<double>> v_negs(
        1 + rng.bounded(4), std::vector<double>(dim));
    for (auto& x : u) x = rng.uniform(-1.5, 1.5);
    for (auto& x : v_pos) x = rng.uniform(-1.5, 1.5);
    for (auto& vn : v_negs)
      for (auto& x : vn) x = rng.uniform(-1.5, 1.5);

    std::vector<double> gu, gv;
    std::vector<std::vector<double>> gn;
    sgns::pair_gradients(u, v_pos, v_negs, gu, gv, gn);

    const double h = 1e-6;
    auto check = [&](std::vector<double>& vec, std::size_t i, double grad) {
      const double keep = vec[i];
      vec[i] = keep + h;
      const double jp = sgns::pair_objective(u, v_pos, v_negs);
      vec[i] = keep - h;
      const double jm = sgns::pair_objective(u, v_pos, v_negs);
      vec[i] = keep;
      const double fd = (jp - jm) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(grad), 1e-8});
      CHECK(std::abs(fd - grad) / denom < 1e-5);
    };
    for (int i = 0; i < dim; i += 3) {
      check(u, i, gu[i]);
      check(v_pos, i, gv[i]);
      check(v_negs[0], i, gn[0][i]);
    }
  }
}

TEST_CASE("two-cluster corpus separates in embedding space", "[sgns]") {
  auto slice = fixtures::two_cluster_corpus(10, 150, 8, 31);
  auto cfg = small_config();
  cfg.dim = 16;
  cfg.epochs = 12;
  auto model = sgns::train(slice, cfg);

  double within = 0, cross = 0;
  long n_within = 0, n_cross = 0;
  for (std::size_t i = 0; i < model.vocab.size(); ++i)
    for (std::size_t j = i + 1; j < model.vocab.size(); ++j) {
      const bool same = model.vocab.words[i][0] == model.vocab.words[j][0];
      const double c = cosine_rows(model, static_cast<std::int32_t>(i),
                                   static_cast<std::int32_t>(j));
      (same ? within : cross) += c;
      (same ? n_within : n_cross) += 1;
    }
  within /= static_cast<double>(n_within);
  cross /= static_cast<double>(n_cross);
  CHECK(within > cross);
}

TEST_CASE("compass training aligns slices by construction", "[sgns]") {
  auto slices = fixtures::two_slice_corpus(37);
  auto cfg = small_config();
  cfg.epochs = 5;
  auto result = sgns::train_compass(slices, cfg);

  REQUIRE(result.slices.size() == 2);
  // all context matrices bit-identical to the compass's
  for (const auto& m : result.slices) {
    CHECK(m.vocab.words == result.compass.vocab.words);
    CHECK(m.dim == result.compass.dim);
    REQUIRE(m.context.size() == result.compass.context.size());
    CHECK(std::memcmp(m.context.data(), result.compass.context.data(),
                      m.context.size() * sizeof(float)) == 0);
  }
  // target matrices differ across slices
  CHECK(result.slices[0].target != result.slices[1].target);

  // cross-slice cosine is well-defined without any further alignment
  auto id = result.compass.vocab.id_of("s0");
  REQUIRE(id >= 0);
  auto ra = result.slices[0].target_row(static_cast<std::size_t>(id));
  auto rb = result.slices[1].target_row(static_cast<std::size_t>(id));
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    d += static_cast<double>(ra[i]) * rb[i];
    na += static_cast<double>(ra[i]) * ra[i];
    nb += static_cast<double>(rb[i]) * rb[i];
  }
  const double cos = d / (std::sqrt(na) * std::sqrt(nb));
  CHECK(std::isfinite(cos));
  CHECK(cos >= -1.0);
  CHECK(cos <= 1.0);
}

TEST_CASE("train_compass requires at least two slices", "[sgns]") {
  auto slices = fixtures::two_slice_corpus(41);
  slices.resize(1);
  CHECK_THROWS_AS(sgns::train_compass(slices, small_config()),
                  InvalidArgError);
}

TEST_CASE("multi-worker training produces finite matrices", "[sgns]") {
  auto slice = fixtures::two_cluster_corpus(8, 80, 6, 47);
  auto cfg = small_config();
  cfg.epochs = 2;
  cfg.workers = 3;
  auto model = sgns::train(slice, cfg);
  CHECK(model.target.size() == model.vocab.size() * 16);
  for (float x : model.target) REQUIRE(std::isfinite(x));
  for (float x : model.context) REQUIRE(std::isfinite(x));

  // freezing still holds under racing workers: context rows are never written
  auto slices = fixtures::two_slice_corpus(48);
  auto compass = sgns::train(corpus::concat_slices(slices), cfg);
  sgns::FrozenContext frozen{&compass.vocab, &compass.context, compass.dim};
  auto slice_model = sgns::train(slices[1], cfg, &frozen);
  CHECK(std::memcmp(slice_model.context.data(), compass.context.data(),
                    compass.context.size() * sizeof(float)) == 0);
}

TEST_CASE("sgns model converts to an embedding space", "[sgns]") {
  auto slice = fixtures::two_cluster_corpus(6, 40, 5, 43);
  auto cfg = small_config();
  cfg.epochs = 2;
  auto model = sgns::train(slice, cfg);
  auto space = sgns::to_embedding_space(model, "fixture");
  CHECK(space.size() == model.vocab.size());
  CHECK(space.dim() == model.dim);
  CHECK(space.meta().at("slice") == "fixture");
  auto id = model.vocab.id_of(space.words()[0]);
  auto row = space.row(0);
  auto trow = model.target_row(static_cast<std::size_t>(id));
  for (std::size_t i = 0; i < row.size(); ++i) CHECK(row[i] == trow[i]);
}
