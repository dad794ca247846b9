#pragma once

#include <stdexcept>
#include <string>

namespace rit {

/// Shape or feature-width mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Violated precondition of an operation.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// NaN or infinity where finite values are required.
class NonFiniteError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Malformed input file. The message names the file and line.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RIT_EXPECT(cond, ErrorType, msg) \
  do {                                   \
    if (!(cond)) throw ErrorType(msg);   \
  } while (0)

}  // namespace rit
