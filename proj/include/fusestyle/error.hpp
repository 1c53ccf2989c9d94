#pragma once

#include <stdexcept>
#include <string>

namespace fusestyle {

// Error taxonomy. The CLI maps these onto its stable exit codes:
// validation/contract -> 2, I/O -> 3, numerical -> 4.

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or rank disagreements between tensors.
class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Caller broke an API precondition (e.g. backward() twice on one tape).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A shard failed its manifest checksum.
class CorruptionError : public IoError {
 public:
  using IoError::IoError;
};

// Non-finite values appeared where the contract forbids them.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fusestyle
