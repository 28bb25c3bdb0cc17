#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tembed/errors.hpp"
#include "tembed/rng.hpp"

namespace tembed::store {

struct OovPolicy {
  enum class Mode { error, zero_vector, mean_vector, hashed_random };
  Mode mode = Mode::hashed_random;
  std::uint64_t seed = 0;  // hashed_random only

  static OovPolicy parse(const std::string& name, std::uint64_t seed = 0) {
    if (name == "error") return {Mode::error, seed};
    if (name == "zero") return {Mode::zero_vector, seed};
    if (name == "mean") return {Mode::mean_vector, seed};
    if (name == "hashed") return {Mode::hashed_random, seed};
    throw InvalidArgError("unknown OOV policy: " + name);
  }
};

// Immutable after construction: vocabulary with index map, row-major float32
// matrix, free-form metadata. Similarity math accumulates in double.
class EmbeddingSpace {
 public:
  EmbeddingSpace() = default;

  EmbeddingSpace(std::vector<std::string> words, std::vector<float> data,
                 int dim, std::map<std::string, std::string> meta = {})
      : words_(std::move(words)),
        data_(std::move(data)),
        dim_(dim),
        meta_(std::move(meta)) {
    if (dim_ <= 0) throw DimMismatchError("embedding dim must be positive");
    if (data_.size() != words_.size() * static_cast<std::size_t>(dim_))
      throw DimMismatchError("matrix size does not match |vocab| x dim");
    index_.reserve(words_.size());
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], i).second)
        throw InvalidArgError("duplicate word in vocabulary: " + words_[i]);
    }
    for (float v : data_)
      if (!std::isfinite(v))
        throw FormatError("embedding matrix contains a non-finite value");
    mean_.assign(dim_, 0.0f);
    if (!words_.empty()) {
      std::vector<double> acc(dim_, 0.0);
      for (std::size_t i = 0; i < words_.size(); ++i)
        for (int j = 0; j < dim_; ++j) acc[j] += data_[i * dim_ + j];
      for (int j = 0; j < dim_; ++j)
        mean_[j] = static_cast<float>(acc[j] / static_cast<double>(words_.size()));
    }
  }

  std::size_t size() const { return words_.size(); }
  int dim() const { return dim_; }
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<float>& data() const { return data_; }
  const std::map<std::string, std::string>& meta() const { return meta_; }
  std::map<std::string, std::string>& meta() { return meta_; }

  bool contains(const std::string& word) const { return index_.count(word) > 0; }

  std::optional<std::size_t> index_of(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dim_, static_cast<std::size_t>(dim_)};
  }

  const std::vector<float>& column_mean() const { return mean_; }

 private:
  std::vector<std::string> words_;
  std::vector<float> data_;
  int dim_ = 0;
  std::map<std::string, std::string> meta_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<float> mean_;
};

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

inline double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

inline double cosine(std::span<const float> a, std::span<const float> b) {
  double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0)
    throw ZeroNormError("cosine of an all-zero vector is undefined");
  return dot(a, b) / (na * nb);
}

inline std::vector<float> lookup(const EmbeddingSpace& space,
                                 const std::string& word,
                                 const OovPolicy& policy) {
  if (auto idx = space.index_of(word)) {
    auto r = space.row(*idx);
    return {r.begin(), r.end()};
  }
  switch (policy.mode) {
    case OovPolicy::Mode::error:
      throw OovError("word not in vocabulary: " + word);
    case OovPolicy::Mode::zero_vector:
      return std::vector<float>(space.dim(), 0.0f);
    case OovPolicy::Mode::mean_vector:
      return space.column_mean();
    case OovPolicy::Mode::hashed_random: {
      Rng rng(hash_mix(fnv1a(word), policy.seed));
      std::vector<float> v(space.dim());
      const double half = 0.5 / space.dim();
      for (auto& x : v) x = static_cast<float>(rng.uniform(-half, half));
      return v;
    }
  }
  throw InvalidArgError("unreachable OOV policy");
}

// Top-k by cosine, query excluded, descending similarity, ties broken
// lexicographically. Zero-norm candidate rows are skipped (their cosine is
// undefined).
inline std::vector<std::pair<std::string, double>> nearest_neighbors(
    const EmbeddingSpace& space, const std::string& word, std::size_t k) {
  if (k < 1) throw InvalidArgError("nearest_neighbors: k must be >= 1");
  auto idx = space.index_of(word);
  if (!idx) throw OovError("word not in vocabulary: " + word);
  auto q = space.row(*idx);
  double qn = norm(q);
  if (qn == 0.0)
    throw ZeroNormError("query word has an all-zero vector: " + word);

  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (i == *idx) continue;
    auto r = space.row(i);
    double rn = norm(r);
    if (rn == 0.0) continue;
    scored.emplace_back(space.words()[i], dot(q, r) / (qn * rn));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

// ---------------------------------------------------------------------------
// interchange formats
//
// Text: optional first line "V dim", then one word per line followed by dim
// floats printed with 9 significant digits (round-trip safe for 32-bit
// values). Headerless GloVe-style files are accepted on load, with dim
// inferred from the first row.
//
// Binary: ASCII header "V dim\n", then for each word its UTF-8 bytes, one
// 0x20 byte, and dim little-endian IEEE-754 32-bit floats, no separator.

namespace detail {

inline void write_f32_le(std::ofstream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  unsigned char b[4] = {static_cast<unsigned char>(bits & 0xFF),
                        static_cast<unsigned char>((bits >> 8) & 0xFF),
                        static_cast<unsigned char>((bits >> 16) & 0xFF),
                        static_cast<unsigned char>((bits >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline float read_f32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("unexpected end of binary embedding file");
  std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                       (static_cast<std::uint32_t>(b[1]) << 8) |
                       (static_cast<std::uint32_t>(b[2]) << 16) |
                       (static_cast<std::uint32_t>(b[3]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline bool all_digits(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  return true;
}

struct ParsedRows {
  std::vector<std::string> words;
  std::vector<float> data;
  int dim = 0;
};

// first-occurrence-wins on duplicate words, with a warning
inline void append_row(ParsedRows& rows, const std::string& word,
                       const std::vector<float>& values,
                       std::unordered_map<std::string, bool>& seen,
                       std::vector<std::string>* warnings) {
  if (seen.count(word)) {
    if (warnings)
      warnings->push_back("duplicate word '" + word +
                          "', keeping first occurrence");
    return;
  }
  seen.emplace(word, true);
  rows.words.push_back(word);
  rows.data.insert(rows.data.end(), values.begin(), values.end());
}

}  // namespace detail

inline void save_text(const EmbeddingSpace& space, const std::string& path,
                      bool with_header = true) {
  std::ofstream out(path);
  if (!out) throw InvalidArgError("cannot write embedding file: " + path);
  if (with_header) out << space.size() << ' ' << space.dim() << '\n';
  char buf[64];
  for (std::size_t i = 0; i < space.size(); ++i) {
    out << space.words()[i];
    auto r = space.row(i);
    for (float v : r) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
      out << ' ' << buf;
    }
    out << '\n';
  }
}

inline EmbeddingSpace load_text(const std::string& path,
                                std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw InvalidArgError("cannot open embedding file: " + path);
  std::string line;
  detail::ParsedRows rows;
  std::unordered_map<std::string, bool> seen;
  long declared_count = -1;
  long rows_read = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> toks;
    std::string t;
    while (ls >> t) toks.push_back(t);
    if (first_content_line) {
      first_content_line = false;
      // A first line of exactly two integers is a "V dim" header. (A
      // headerless file of one-dimensional integer-named vectors is
      // indistinguishable; the header reading wins.)
      if (toks.size() == 2 && detail::all_digits(toks[0]) &&
          detail::all_digits(toks[1])) {
        declared_count = std::stol(toks[0]);
        rows.dim = std::stoi(toks[1]);
        if (declared_count < 0 || rows.dim <= 0)
          throw FormatError("malformed header in " + path);
        continue;
      }
    }
    if (toks.size() < 2)
      throw FormatError("embedding row with no values: " + line);
    if (rows.dim == 0) rows.dim = static_cast<int>(toks.size()) - 1;
    if (static_cast<int>(toks.size()) - 1 != rows.dim)
      throw FormatError("inconsistent row length for word '" + toks[0] +
                        "': expected " + std::to_string(rows.dim) +
                        " values, got " + std::to_string(toks.size() - 1));
    std::vector<float> values(rows.dim);
    for (int j = 0; j < rows.dim; ++j) {
      char* end = nullptr;
      values[j] = std::strtof(toks[j + 1].c_str(), &end);
      if (end == toks[j + 1].c_str() || *end != '\0')
        throw FormatError("unparseable float '" + toks[j + 1] + "' in " + path);
    }
    detail::append_row(rows, toks[0], values, seen, warnings);
    ++rows_read;
  }
  if (rows.dim == 0) throw FormatError("empty embedding file: " + path);
  if (declared_count >= 0 && declared_count != rows_read)
    throw FormatError("header declares " + std::to_string(declared_count) +
                      " rows but file has " + std::to_string(rows_read));
  EmbeddingSpace space(std::move(rows.words), std::move(rows.data), rows.dim);
  space.meta()["source"] = path;
  return space;
}

inline void save_binary(const EmbeddingSpace& space, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgError("cannot write embedding file: " + path);
  out << space.size() << ' ' << space.dim() << '\n';
  for (std::size_t i = 0; i < space.size(); ++i) {
    out << space.words()[i];
    out.put(' ');
    for (float v : space.row(i)) detail::write_f32_le(out, v);
  }
}

inline EmbeddingSpace load_binary(const std::string& path,
                                  std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgError("cannot open embedding file: " + path);
  std::string header;
  if (!std::getline(in, header))
    throw FormatError("missing header in binary embedding file: " + path);
  std::istringstream hs(header);
  long count = -1;
  int dim = 0;
  if (!(hs >> count >> dim) || count < 0 || dim <= 0)
    throw FormatError("malformed header in " + path);
  detail::ParsedRows rows;
  rows.dim = dim;
  std::unordered_map<std::string, bool> seen;
  std::vector<float> values(dim);
  for (long i = 0; i < count; ++i) {
    std::string word;
    char c;
    while (in.get(c) && c != ' ') word.push_back(c);
    if (!in)
      throw FormatError("unexpected end of file reading word " +
                        std::to_string(i) + " in " + path);
    for (int j = 0; j < dim; ++j) values[j] = detail::read_f32_le(in);
    detail::append_row(rows, word, values, seen, warnings);
  }
  EmbeddingSpace space(std::move(rows.words), std::move(rows.data), dim);
  space.meta()["source"] = path;
  return space;
}

// Control bytes other than \t \n \r in the first 4 KiB mean binary; raw
// float32 payloads contain them with near certainty, text never does.
inline bool sniff_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgError("cannot open embedding file: " + path);
  char buf[4096];
  in.read(buf, sizeof(buf));
  std::streamsize n = in.gcount();
  for (std::streamsize i = 0; i < n; ++i) {
    unsigned char c = static_cast<unsigned char>(buf[i]);
    if (c < 0x09 || (c > 0x0D && c < 0x20)) return true;
  }
  return false;
}

inline EmbeddingSpace load_auto(const std::string& path,
                                std::vector<std::string>* warnings = nullptr) {
  return sniff_binary(path) ? load_binary(path, warnings)
                            : load_text(path, warnings);
}

}  // namespace tembed::store
