#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tabl {

enum class ErrorCategory { shape, config, parse, state, integrity, domain, io };

constexpr std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::config: return "config";
    case ErrorCategory::parse: return "parse";
    case ErrorCategory::state: return "state";
    case ErrorCategory::integrity: return "integrity";
    case ErrorCategory::domain: return "domain";
    case ErrorCategory::io: return "io";
  }
  return "unknown";
}

// Process exit code used by the CLI for each category.
constexpr int exit_code(ErrorCategory c) { return 10 + static_cast<int>(c); }

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(std::string(category_name(category)) + " error: " + what),
        category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorCategory::shape, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCategory::config, w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(ErrorCategory::parse, w) {}
};
struct StateError : Error {
  explicit StateError(const std::string& w) : Error(ErrorCategory::state, w) {}
};
struct IntegrityError : Error {
  explicit IntegrityError(const std::string& w) : Error(ErrorCategory::integrity, w) {}
};
struct DomainError : Error {
  explicit DomainError(const std::string& w) : Error(ErrorCategory::domain, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCategory::io, w) {}
};

}  // namespace tabl
