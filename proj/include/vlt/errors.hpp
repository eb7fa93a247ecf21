#pragma once

#include <stdexcept>
#include <string>

namespace vlt {

// Shape disagreement between operands. The message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A value outside an operation's accepted domain (bad label, bad group count, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input that makes a quantity undefined, e.g. a zero-norm row for cosine similarity.
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Caller broke a structural contract (non-scalar loss, wiring against a missing stage, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotImplementedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace vlt
