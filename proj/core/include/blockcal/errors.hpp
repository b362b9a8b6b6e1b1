#pragma once

#include <stdexcept>
#include <string>

namespace blockcal {

// Every failure mode the library reports deliberately gets its own type so
// callers (and the CLI) can map it to a stable error code.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionMismatch : Error {
  explicit DimensionMismatch(const std::string& msg) : Error(msg) {}
};

struct NotPositiveDefinite : Error {
  explicit NotPositiveDefinite(const std::string& msg) : Error(msg) {}
};

struct RegionUnreachable : Error {
  explicit RegionUnreachable(const std::string& msg) : Error(msg) {}
};

struct OutOfDomain : Error {
  explicit OutOfDomain(const std::string& msg) : Error(msg) {}
};

struct OptimizerDiverged : Error {
  explicit OptimizerDiverged(const std::string& msg) : Error(msg) {}
};

struct InitInfeasible : Error {
  explicit InitInfeasible(const std::string& msg) : Error(msg) {}
};

struct NonDifferentiablePoint : Error {
  explicit NonDifferentiablePoint(const std::string& msg) : Error(msg) {}
};

struct EmptyChain : Error {
  explicit EmptyChain(const std::string& msg) : Error(msg) {}
};

struct ParseError : Error {
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace blockcal
