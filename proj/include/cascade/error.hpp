#pragma once

#include <stdexcept>
#include <string>

namespace cascade {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (corpus, ensemble log, label file, flags).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration of a component, e.g. a stub asked about an utterance it does not know.
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// The LLM endpoint could not be reached, or kept failing after all retries.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// The endpoint answered with a non-success HTTP status.
class HttpStatusError : public TransportError {
 public:
  HttpStatusError(int status, const std::string& body_excerpt)
      : TransportError("HTTP status " + std::to_string(status) + ": " + body_excerpt),
        status_(status),
        body_excerpt_(body_excerpt) {}

  int status() const noexcept { return status_; }
  const std::string& body_excerpt() const noexcept { return body_excerpt_; }

 private:
  int status_;
  std::string body_excerpt_;
};

/// An internal invariant was broken. Always a bug.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace cascade
