#pragma once

#include <stdexcept>
#include <string>

namespace paneldid {

// Error categories map onto CLI exit codes: config=2, data=3, estimation=4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

struct EstimationError : std::runtime_error {
  explicit EstimationError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace paneldid
