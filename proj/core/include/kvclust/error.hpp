#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kvclust {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Vector with norm below the degeneracy floor where a direction is required.
class DegenerateVector : public Error {
 public:
  using Error::Error;
};

class DimMismatch : public Error {
 public:
  DimMismatch(std::size_t a, std::size_t b)
      : Error("dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class EmptyCluster : public Error {
 public:
  using Error::Error;
};

class TooFewPoints : public Error {
 public:
  using Error::Error;
};

class BadLayer : public Error {
 public:
  explicit BadLayer(int layer) : Error("layer out of range: " + std::to_string(layer)) {}
};

class UnknownCluster : public Error {
 public:
  explicit UnknownCluster(long long id) : Error("unknown cluster id: " + std::to_string(id)) {}
};

class EmptyIndex : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or CLI usage. Mapped to exit code 2 by the CLI.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Workload generation could not satisfy its geometric constraints.
class ConfigInfeasible : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// A structural invariant check failed mid-run. Mapped to exit code 3.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace kvclust
