#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace binsed {

// Malformed external input: WAV containers, feature files, audio length,
// tensor element values.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An element outside its admissible value set; carries the flat index.
class ValueError : public FormatError {
 public:
  ValueError(const std::string& what, std::size_t index)
      : FormatError(what + " at flat index " + std::to_string(index)), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

// Tensor / layer shape disagreement.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Base class for every defect found while loading or validating a model.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BadMagicError : public ModelError {
 public:
  using ModelError::ModelError;
};

class VersionError : public ModelError {
 public:
  using ModelError::ModelError;
};

class ChecksumError : public ModelError {
 public:
  using ModelError::ModelError;
};

class TruncatedError : public ModelError {
 public:
  using ModelError::ModelError;
};

class TrailingBytesError : public ModelError {
 public:
  using ModelError::ModelError;
};

// Worst-case accumulator magnitude does not fit the declared accumulator width.
class OverflowRiskError : public ModelError {
 public:
  using ModelError::ModelError;
};

// Batch-norm parameters that cannot be folded into a threshold.
class FoldError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tile plan inconsistent with the network's receptive field.
class PlanError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace binsed
