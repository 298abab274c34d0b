#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace darn {

/// Jacobian or projection internals requested at a numerically degenerate
/// point (curvature term A <= 0, which cannot happen for a consistent
/// threshold/support pair).
class DegeneratePointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss. The message names the offending
/// domain so multi-source runs are debuggable.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed data file. Carries the 1-based line number of the offence.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, long line)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

/// Invalid experiment configuration. Carries the offending field path
/// (e.g. "dataset.flip.fraction").
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& msg)
      : std::runtime_error("config field '" + field + "': " + msg), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace darn
