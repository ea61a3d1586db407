#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gapl {

// Base class for every failure raised by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Caller broke a documented precondition (shape mismatch, bad argument).
struct ContractError : Error {
  explicit ContractError(const std::string& what) : Error(what) {}
};

// Malformed or truncated file; carries the byte offset of the problem.
struct FormatError : Error {
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset(offset) {}
  std::size_t offset = 0;
};

// Numeric failure: non-finite values where finiteness is required.
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(what) {}
};

// Input is degenerate for the requested operation (zero norm, empty group).
struct DegenerateInputError : NumericError {
  explicit DegenerateInputError(const std::string& what) : NumericError(what) {}
};

// Argument outside the mathematical domain of the operation.
struct DomainError : NumericError {
  explicit DomainError(const std::string& what) : NumericError(what) {}
};

// Operation refused because it would exceed a configured resource limit.
struct ResourceGuardError : Error {
  explicit ResourceGuardError(const std::string& what) : Error(what) {}
};

inline void check_contract(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

}  // namespace gapl
