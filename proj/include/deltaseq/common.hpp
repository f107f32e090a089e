#pragma once

#include <stdexcept>
#include <string>

namespace deltaseq {

/// Invalid configuration, structure file, or CLI arguments. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid or degenerate data (single-class labels, non-finite values,
/// unreadable cohort files). CLI exit code 3.
class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Every run of an experiment was invalid (e.g. single-class test splits).
/// CLI exit code 4.
class AllRunsInvalidError : public std::runtime_error {
public:
  explicit AllRunsInvalidError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace deltaseq
