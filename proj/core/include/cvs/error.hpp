#pragma once

#include <stdexcept>
#include <string>

namespace cvs {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or extents that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-domain scalar arguments (even kernel size, non-finite position, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Reductions with nothing to reduce over (all labels ignored, empty mask).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// Two forward passes of the same op disagreed.
class DeterminismError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Scene generator could not satisfy its invariants.
class GenerationError : public Error {
 public:
  using Error::Error;
};

// Malformed files or unreadable paths.
class IoError : public Error {
 public:
  using Error::Error;
};

// Invalid model / CLI configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cvs
