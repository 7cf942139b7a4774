#pragma once

#include <stdexcept>
#include <string>

namespace wasgd {

// Exit codes used by the CLI: 0 ok, 2 config error, 3 data error, 4 instability.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
  static constexpr int exit_code = 2;
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
  static constexpr int exit_code = 3;
};

// Divergent trajectories, non-positive variance denominators, engine aborts
// (worker panic, async round timeout).
class InstabilityError : public std::runtime_error {
 public:
  explicit InstabilityError(const std::string& msg) : std::runtime_error(msg) {}
  static constexpr int exit_code = 4;
};

// All worker loss energies are zero; callers fall back to equal weights.
class DegenerateEnergyError : public std::runtime_error {
 public:
  explicit DegenerateEnergyError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace wasgd
