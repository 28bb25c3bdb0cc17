#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <string>
#include <vector>

#include "tembed/errors.hpp"
#include "tembed/store.hpp"

namespace tembed::align {

struct AlignmentResult {
  Eigen::MatrixXd rotation;             // dim x dim, orthogonal (det may be -1)
  std::vector<std::string> shared_vocab;
  double residual = 0.0;                // ||A * rotation - B||_F on shared rows
};

namespace detail {

// Rows are the shared-vocab vectors of `space`, promoted to double.
inline Eigen::MatrixXd shared_rows(const store::EmbeddingSpace& space,
                                   const std::vector<std::string>& words) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(words.size()), space.dim());
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto r = space.row(*space.index_of(words[i]));
    for (int j = 0; j < space.dim(); ++j) m(static_cast<Eigen::Index>(i), j) = r[j];
  }
  return m;
}

}  // namespace detail

// Rotation W = U * V^T from the SVD of A^T B, minimizing ||A W - B||_F over
// orthogonal W. Row-vector convention: an aligned source row is row * W.
// No centering, no scaling; reflections (det W = -1) are accepted. When
// top_n > 0 the shared vocabulary is restricted to the first top_n shared
// words in source vocabulary order (embedding files conventionally sort by
// descending frequency).
inline AlignmentResult procrustes_align(
    const store::EmbeddingSpace& source, const store::EmbeddingSpace& target,
    std::size_t top_n = 0, std::vector<std::string>* warnings = nullptr) {
  if (source.dim() != target.dim())
    throw DimMismatchError("procrustes: source dim " +
                           std::to_string(source.dim()) + " != target dim " +
                           std::to_string(target.dim()));
  std::vector<std::string> shared;
  for (const auto& w : source.words()) {
    if (target.contains(w)) shared.push_back(w);
    if (top_n > 0 && shared.size() == top_n) break;
  }
  if (shared.empty())
    throw EmptySharedVocabError("procrustes: spaces share no vocabulary");
  if (shared.size() < static_cast<std::size_t>(source.dim()) && warnings)
    warnings->push_back("shared vocabulary (" + std::to_string(shared.size()) +
                        " words) is smaller than dim " +
                        std::to_string(source.dim()) +
                        "; rotation may be poorly constrained");

  Eigen::MatrixXd a = detail::shared_rows(source, shared);
  Eigen::MatrixXd b = detail::shared_rows(target, shared);
  Eigen::MatrixXd m = a.transpose() * b;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  AlignmentResult result;
  result.rotation = svd.matrixU() * svd.matrixV().transpose();
  result.shared_vocab = std::move(shared);
  result.residual = (a * result.rotation - b).norm();
  return result;
}

// Every row of `space` rotated; vocabulary and metadata carried over.
inline store::EmbeddingSpace apply_rotation(const store::EmbeddingSpace& space,
                                            const Eigen::MatrixXd& rotation) {
  if (rotation.rows() != space.dim() || rotation.cols() != space.dim())
    throw DimMismatchError("rotation shape does not match embedding dim");
  const int d = space.dim();
  std::vector<float> data(space.size() * static_cast<std::size_t>(d));
  Eigen::VectorXd x(d), y(d);
  for (std::size_t i = 0; i < space.size(); ++i) {
    auto r = space.row(i);
    for (int j = 0; j < d; ++j) x(j) = r[j];
    y.noalias() = rotation.transpose() * x;  // row * W
    for (int j = 0; j < d; ++j)
      data[i * static_cast<std::size_t>(d) + j] = static_cast<float>(y(j));
  }
  return store::EmbeddingSpace(space.words(), std::move(data), d, space.meta());
}

// Rotates every space into the anchor's coordinate system by composing
// adjacent pairwise rotations toward the anchor; the anchor comes back
// unchanged.
inline std::vector<store::EmbeddingSpace> align_chain(
    const std::vector<store::EmbeddingSpace>& spaces, std::size_t anchor,
    std::size_t top_n = 0, std::vector<std::string>* warnings = nullptr) {
  if (spaces.empty()) throw InvalidArgError("align_chain: no spaces");
  if (anchor >= spaces.size())
    throw InvalidArgError("align_chain: anchor index out of range");
  for (const auto& s : spaces)
    if (s.dim() != spaces[0].dim())
      throw DimMismatchError("align_chain: spaces have differing dims");

  auto pair_rotation = [&](std::size_t from, std::size_t to) {
    try {
      return procrustes_align(spaces[from], spaces[to], top_n, warnings)
          .rotation;
    } catch (const EmptySharedVocabError& e) {
      throw EmptySharedVocabError(std::string(e.what()) + " (pair " +
                                  std::to_string(from) + " -> " +
                                  std::to_string(to) + ")");
    }
  };

  std::vector<store::EmbeddingSpace> aligned;
  aligned.reserve(spaces.size());
  const int d = spaces[0].dim();
  for (std::size_t i = 0; i < spaces.size(); ++i) {
    if (i == anchor) {
      aligned.push_back(spaces[i]);
      continue;
    }
    Eigen::MatrixXd w = Eigen::MatrixXd::Identity(d, d);
    if (i < anchor) {
      for (std::size_t j = i; j < anchor; ++j) w = w * pair_rotation(j, j + 1);
    } else {
      for (std::size_t j = i; j > anchor; --j) w = w * pair_rotation(j, j - 1);
    }
    aligned.push_back(apply_rotation(spaces[i], w));
  }
  return aligned;
}

}  // namespace tembed::align
