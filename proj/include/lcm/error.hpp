#pragma once

#include <stdexcept>
#include <string>

namespace lcm {

enum class ErrorKind {
  kValidation,
  kFormat,
  kIo,
  kNumeric,
};

/// Base for every error the library throws. `kind()` drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::kValidation, what) {}
};

class FormatError : public Error {
 public:
  enum class Reason { kBadMagic, kBadVersion, kTruncated, kMalformed };

  FormatError(Reason reason, const std::string& what)
      : Error(ErrorKind::kFormat, what), reason_(reason) {}
  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

/// Loss divergence or non-finite gradients during training.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

inline void require(bool cond, const std::string& message) {
  if (!cond) throw ValidationError(message);
}

}  // namespace lcm
