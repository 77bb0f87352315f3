#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace geneic {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition of an operation.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Input tensor or image does not match the backend's expected shape.
class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

class TokenizationError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Binary file could not be decoded. Carries the byte offset where decoding
// stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class NoPartnerError : public Error {
 public:
  using Error::Error;
};

class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace geneic
