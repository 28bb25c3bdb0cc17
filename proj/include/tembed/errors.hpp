#pragma once

#include <stdexcept>
#include <string>

namespace tembed {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// vocabulary construction left no words after min_count filtering
struct EmptyVocabError : Error {
  using Error::Error;
};

// embedding / matrix dimensions disagree
struct DimMismatchError : Error {
  using Error::Error;
};

// two spaces share no vocabulary
struct EmptySharedVocabError : Error {
  using Error::Error;
};

// word not in vocabulary (under OovPolicy::Mode::error, or a direct lookup)
struct OovError : Error {
  using Error::Error;
};

// cosine against an all-zero vector is undefined
struct ZeroNormError : Error {
  using Error::Error;
};

// malformed embedding / checkpoint / sidecar file
struct FormatError : Error {
  using Error::Error;
};

// tensor shapes inconsistent with the detector configuration
struct ShapeError : Error {
  using Error::Error;
};

// training loss went NaN/inf
struct NonFiniteLossError : Error {
  using Error::Error;
};

// bad dataset row: malformed field, index out of range, label/token length
// mismatch, unknown genre
struct DatasetError : Error {
  using Error::Error;
};

// bad caller-supplied argument (invalid year, k too large, missing resource)
struct InvalidArgError : Error {
  using Error::Error;
};

}  // namespace tembed
