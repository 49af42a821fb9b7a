#pragma once

#include <stdexcept>
#include <string>

namespace hesn {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments or configuration (bad ranges, dimension mismatch).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Reservoir construction failed (degenerate matrix, eigensolver failure).
class ConstructionError : public Error {
 public:
  using Error::Error;
};

/// Spectral radius could not be determined; carries the best estimate.
class SpectralRadiusError : public Error {
 public:
  SpectralRadiusError(const std::string& what, double best_estimate)
      : Error(what), best_estimate_(best_estimate) {}
  double best_estimate() const { return best_estimate_; }

 private:
  double best_estimate_;
};

/// A state, trace or loss became non-finite.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Eigenbasis too ill-conditioned for modal projection.
class IllConditionedError : public Error {
 public:
  using Error::Error;
};

/// Malformed IDX or config input.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace hesn
