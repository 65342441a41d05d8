#pragma once

#include <stdexcept>
#include <string>

namespace autotune {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration or encoded point does not fit its search space.
class SpaceError : public Error {
 public:
  using Error::Error;
};

/// Kernel matrix could not be factorized even at the largest jitter.
class IllConditionedKernel : public Error {
 public:
  using Error::Error;
};

class SearchSpaceExhausted : public Error {
 public:
  SearchSpaceExhausted() : Error("search space exhausted") {}
};

/// Evaluator failed twice in a row for the same request.
class EvaluatorError : public Error {
 public:
  using Error::Error;
};

/// A run log could not be read back. `last_valid_index` is the index of the
/// last observation that parsed and validated (0 if none).
class ResumeError : public Error {
 public:
  ResumeError(const std::string& what, int last_valid_index)
      : Error("resume error: " + what + " (last valid index " +
              std::to_string(last_valid_index) + ")"),
        last_valid_index_(last_valid_index) {}

  int last_valid_index() const noexcept { return last_valid_index_; }

 private:
  int last_valid_index_;
};

/// Tail surgery produced a shape contract that no adapter can repair.
class IrreparableMismatch : public Error {
 public:
  IrreparableMismatch(const std::string& what, int position)
      : Error("irreparable mismatch at layer " + std::to_string(position) +
              ": " + what),
        position_(position) {}

  int position() const noexcept { return position_; }

 private:
  int position_;
};

}  // namespace autotune
