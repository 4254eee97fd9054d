#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace crosstill {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  contract,  // violated precondition (shapes, ranges, empty inputs)
  config,    // inconsistent configuration
  numeric,   // NaN/Inf produced during forward or backward
  io,        // unreadable/unwritable path
  format,    // malformed checkpoint, TSV or JSON
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ContractViolation : Error {
  explicit ContractViolation(const std::string& what) : Error(ErrorKind::contract, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct NumericError : Error {
  NumericError(std::string primitive, const std::string& what)
      : Error(ErrorKind::numeric, what), primitive_(std::move(primitive)) {}
  const std::string& primitive() const noexcept { return primitive_; }

 private:
  std::string primitive_;
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(ErrorKind::format, what) {}
};

/// Malformed text input; carries the 1-based line number.
struct ParseError : FormatError {
  ParseError(std::size_t line, const std::string& what)
      : FormatError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

#define CROSSTILL_EXPECT(cond, msg)                   \
  do {                                                \
    if (!(cond)) throw ::crosstill::ContractViolation(msg); \
  } while (0)

}  // namespace crosstill
