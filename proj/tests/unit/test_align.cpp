#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "tembed/align.hpp"
#include "tembed/rng.hpp"
#include "tembed/store.hpp"

using namespace tembed;
using store::EmbeddingSpace;

namespace {

Eigen::MatrixXd random_orthogonal(int d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = rng.gaussian();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  Eigen::MatrixXd q = qr.householderQ();
  // fix signs so Q is uniquely determined by m
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

EmbeddingSpace random_space(std::size_t v, int dim, std::uint64_t seed,
                            const std::string& prefix = "w") {
  Rng rng(seed);
  std::vector<std::string> words;
  std::vector<float> data;
  for (std::size_t i = 0; i < v; ++i) {
    words.push_back(prefix + std::to_string(i));
    for (int j = 0; j < dim; ++j)
      data.push_back(static_cast<float>(rng.uniform(-0.5, 0.5)));
  }
  return EmbeddingSpace(std::move(words), std::move(data), dim);
}

// target rows are source rows rotated by q (plus optional noise), rounded to
// float32 storage
EmbeddingSpace rotate_space(const EmbeddingSpace& src,
                            const Eigen::MatrixXd& q, double noise = 0.0,
                            std::uint64_t noise_seed = 0) {
  Rng rng(noise_seed);
  const int d = src.dim();
  std::vector<float> data(src.size() * static_cast<std::size_t>(d));
  Eigen::VectorXd x(d);
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto r = src.row(i);
    for (int j = 0; j < d; ++j) x(j) = r[j];
    Eigen::VectorXd y = q.transpose() * x;
    for (int j = 0; j < d; ++j)
      data[i * static_cast<std::size_t>(d) + j] =
          static_cast<float>(y(j) + (noise > 0 ? noise * rng.gaussian() : 0.0));
  }
  return EmbeddingSpace(src.words(), std::move(data), d);
}

double max_abs_off_identity(const Eigen::MatrixXd& w) {
  Eigen::MatrixXd gram = w.transpose() * w;
  return (gram - Eigen::MatrixXd::Identity(w.rows(), w.cols()))
      .cwiseAbs()
      .maxCoeff();
}

}  // namespace

TEST_CASE("self-alignment recovers the identity", "[align]") {
  auto space = random_space(80, 12, 1);
  auto res = align::procrustes_align(space, space);
  CHECK((res.rotation - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff()
        < 1e-6);
  CHECK(res.residual < 1e-6);
  CHECK(res.shared_vocab.size() == 80);
}

TEST_CASE("a planted orthogonal map is recovered", "[align]") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto src = random_space(150, 16, seed * 11);
    auto q = random_orthogonal(16, seed * 13);
    auto dst = rotate_space(src, q);
    auto res = align::procrustes_align(src, dst);
    CHECK((res.rotation - q).norm() < 1e-6);
    CHECK(res.residual < 1e-4);  // float32 storage noise only
  }
}

TEST_CASE("disjoint vocabularies raise", "[align]") {
  auto a = random_space(10, 4, 5, "a");
  auto b = random_space(10, 4, 6, "b");
  CHECK_THROWS_AS(align::procrustes_align(a, b), EmptySharedVocabError);
}

TEST_CASE("dimension mismatch raises", "[align]") {
  auto a = random_space(10, 4, 5);
  auto b = random_space(10, 5, 6);
  CHECK_THROWS_AS(align::procrustes_align(a, b), DimMismatchError);
}

TEST_CASE("rotations are orthogonal", "[align]") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto src = random_space(60, 10, 100 + seed);
    auto dst = rotate_space(src, random_orthogonal(10, 200 + seed),
                            /*noise=*/0.05, seed);
    auto res = align::procrustes_align(src, dst);
    CHECK(max_abs_off_identity(res.rotation) < 1e-6);
  }
}

TEST_CASE("returned rotation beats random orthogonal maps", "[align]") {
  auto src = random_space(60, 8, 42);
  auto dst = rotate_space(src, random_orthogonal(8, 43), /*noise=*/0.1, 44);
  auto res = align::procrustes_align(src, dst);

  Eigen::MatrixXd a(60, 8), b(60, 8);
  for (std::size_t i = 0; i < 60; ++i)
    for (int j = 0; j < 8; ++j) {
      a(static_cast<Eigen::Index>(i), j) = src.row(i)[j];
      b(static_cast<Eigen::Index>(i), j) = dst.row(i)[j];
    }
  const double best = (a * res.rotation - b).norm();
  CHECK(best == Catch::Approx(res.residual));
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const double other = (a * random_orthogonal(8, 1000 + seed) - b).norm();
    CHECK(best <= other + 1e-12);
  }
}

TEST_CASE("rotation preserves cosine similarity", "[align]") {
  auto src = random_space(40, 9, 77);
  auto dst = rotate_space(src, random_orthogonal(9, 78), 0.02, 79);
  auto res = align::procrustes_align(src, dst);

  // the mathematical property, checked in double precision
  Rng rng(80);
  const int d = src.dim();
  for (int iter = 0; iter < 50; ++iter) {
    std::size_t i = rng.bounded(src.size());
    std::size_t j = rng.bounded(src.size());
    if (i == j) continue;
    Eigen::VectorXd x(d), y(d);
    for (int c = 0; c < d; ++c) {
      x(c) = src.row(i)[c];
      y(c) = src.row(j)[c];
    }
    const double before = x.dot(y) / (x.norm() * y.norm());
    Eigen::VectorXd xr = res.rotation.transpose() * x;
    Eigen::VectorXd yr = res.rotation.transpose() * y;
    const double after = xr.dot(yr) / (xr.norm() * yr.norm());
    CHECK(std::abs(before - after) < 1e-9);
  }

  // float32-stored rotated space stays close too
  auto rotated = align::apply_rotation(src, res.rotation);
  auto nn_before = store::nearest_neighbors(src, src.words()[0], 5);
  auto nn_after = store::nearest_neighbors(rotated, src.words()[0], 5);
  for (std::size_t r = 0; r < nn_before.size(); ++r) {
    CHECK(nn_before[r].first == nn_after[r].first);
    CHECK(std::abs(nn_before[r].second - nn_after[r].second) < 1e-5);
  }
}

TEST_CASE("warning when shared vocabulary is smaller than dim", "[align]") {
  auto a = random_space(5, 8, 9);
  std::vector<std::string> warnings;
  align::procrustes_align(a, a, 0, &warnings);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("smaller than dim") != std::string::npos);
}

TEST_CASE("top-n restricts the shared vocabulary", "[align]") {
  auto a = random_space(50, 6, 10);
  auto res = align::procrustes_align(a, a, 20);
  CHECK(res.shared_vocab.size() == 20);
  CHECK(res.shared_vocab[0] == "w0");
}

TEST_CASE("chain with a single space returns it unchanged", "[align]") {
  auto a = random_space(30, 6, 21);
  auto out = align::align_chain({a}, 0);
  REQUIRE(out.size() == 1);
  CHECK(out[0].data() == a.data());
}

TEST_CASE("chain of two identical spaces leaves both unchanged", "[align]") {
  auto a = random_space(30, 6, 22);
  auto out = align::align_chain({a, a}, 0);
  REQUIRE(out.size() == 2);
  for (std::size_t i = 0; i < a.data().size(); ++i)
    CHECK(std::abs(out[1].data()[i] - a.data()[i]) < 1e-6f);
}

TEST_CASE("chain recovers known rotations toward the anchor", "[align]") {
  auto base = random_space(120, 10, 31);
  auto q1 = random_orthogonal(10, 32);
  auto q2 = random_orthogonal(10, 33);
  auto s1 = rotate_space(base, q1);
  auto s2 = rotate_space(base, q2);

  SECTION("anchor at the start") {
    auto out = align::align_chain({base, s1, s2}, 0);
    for (std::size_t i = 0; i < base.data().size(); ++i) {
      CHECK(std::abs(out[1].data()[i] - base.data()[i]) < 1e-5f);
      CHECK(std::abs(out[2].data()[i] - base.data()[i]) < 1e-5f);
    }
  }
  SECTION("anchor in the middle") {
    auto out = align::align_chain({base, s1, s2}, 1);
    CHECK(out[1].data() == s1.data());
    for (std::size_t i = 0; i < base.data().size(); ++i) {
      CHECK(std::abs(out[0].data()[i] - s1.data()[i]) < 1e-5f);
      CHECK(std::abs(out[2].data()[i] - s1.data()[i]) < 1e-5f);
    }
  }
}

TEST_CASE("chain errors name the failing pair", "[align]") {
  auto a = random_space(10, 4, 41, "a");
  auto b = random_space(10, 4, 42, "a");
  auto c = random_space(10, 4, 43, "c");
  try {
    align::align_chain({a, b, c}, 0);
    FAIL("expected EmptySharedVocabError");
  } catch (const EmptySharedVocabError& e) {
    CHECK(std::string(e.what()).find("pair") != std::string::npos);
  }
}
