#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace softmcl {

// Operand shapes are incompatible for the requested operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced NaN/Inf, or a numeric precondition failed.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyperparameter (temperature, rate, count...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A loss was asked to evaluate a batch with no usable anchors/candidates.
class DegenerateBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Sentinel (0) valence passed where a real rating is required.
class MaskedValenceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Value outside its admissible range (e.g. valence outside [1,9]).
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Malformed input text; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Input file does not exist or cannot be opened.
class MissingInputError : public std::runtime_error {
 public:
  explicit MissingInputError(const std::string& path)
      : std::runtime_error("cannot open input: " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class EmptyInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VocabularyError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Checkpoint magic/version mismatch or truncated payload.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Correlation undefined (zero variance, all-equal input).
class UndefinedCorrelationError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Training produced a non-finite loss; carries the failing step.
class TrainingDivergedError : public NumericError {
 public:
  TrainingDivergedError(std::size_t step, const std::string& what)
      : NumericError("step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// A checkpoint does not match the vocabulary or corpus it is used with.
class IncompatibleInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace softmcl
