#pragma once

#include <stdexcept>
#include <string>

namespace latnas {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: config/spec/parameter problems -> 2, latency-table coverage -> 3,
// non-finite numerics -> 4.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParamError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CoverageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace latnas
