#pragma once

#include <stdexcept>
#include <string>

namespace kale {

// Error taxonomy mapped onto CLI exit codes:
//   ConfigError                     -> 1 (usage / configuration)
//   Dimension/Parameter/Input/Parse -> 2 (bad data)
//   Numeric/Training               -> 3 (numeric failure)
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct ParameterError : Error {
  using Error::Error;
};

struct InputError : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

struct PipelineError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct TrainingError : Error {
  using Error::Error;
};

}  // namespace kale
