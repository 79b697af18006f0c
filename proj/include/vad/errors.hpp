#pragma once

#include <stdexcept>
#include <string>

namespace vad {

// Error taxonomy shared by the library and the CLI. The CLI maps these to
// process exit codes: config -> 2, data/format/dimension -> 3, numeric -> 4.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

struct DataFormatError : std::runtime_error {
  explicit DataFormatError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

}  // namespace vad
