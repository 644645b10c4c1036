#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace socialalign {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor/layer shape disagreement. Message names both shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A precondition stated by an operation's contract was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

class EmptyCollectionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Prompt no longer fits the context window even after truncation.
class LengthError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Provider replied, but not in the agreed format. Keeps the raw reply for diagnosis.
class ProviderFormatError : public Error {
 public:
  ProviderFormatError(const std::string& what, std::string raw_reply)
      : Error(what), raw_reply_(std::move(raw_reply)) {}
  const std::string& raw_reply() const { return raw_reply_; }

 private:
  std::string raw_reply_;
};

// Could not reach the provider at all (timeout, connection failure, retries exhausted).
class TransportError : public Error {
 public:
  using Error::Error;
};

// Provider reached but returned a non-success status.
class ServiceError : public Error {
 public:
  ServiceError(const std::string& what, int status, std::string body_excerpt)
      : Error(what), status_(status), body_excerpt_(std::move(body_excerpt)) {}
  int status() const { return status_; }
  const std::string& body_excerpt() const { return body_excerpt_; }

 private:
  int status_;
  std::string body_excerpt_;
};

// Replay mode has no recorded reply for this request hash.
class FixtureMissError : public TransportError {
 public:
  using TransportError::TransportError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace socialalign
