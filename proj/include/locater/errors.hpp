#pragma once

#include <stdexcept>
#include <string>

namespace locater {

// All library failures derive from Error so callers can catch one type at
// the CLI boundary and still discriminate in tests.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct VocabError : Error {
  using Error::Error;
};
struct SequenceError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct DeterminismError : Error {
  using Error::Error;
};
struct PreconditionError : Error {
  using Error::Error;
};
struct CalibrationError : Error {
  using Error::Error;
};
struct GenerationError : Error {
  using Error::Error;
};

}  // namespace locater
