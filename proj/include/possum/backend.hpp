#pragma once

#include <string>

#include "possum/error.hpp"

namespace possum {

enum class AnnotatorErrorKind { RateLimited, Refused, Transport };

std::string_view to_string(AnnotatorErrorKind kind);

class AnnotatorFailure : public Error {
 public:
  AnnotatorFailure(AnnotatorErrorKind kind, const std::string& what)
      : Error(Errc::AnnotatorError, std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  AnnotatorErrorKind kind() const { return kind_; }

 private:
  AnnotatorErrorKind kind_;
};

/// A text-completion service. Implementations must be callable from several threads.
class AnnotatorBackend {
 public:
  virtual ~AnnotatorBackend() = default;
  /// Throws AnnotatorFailure.
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string model_name() const = 0;
  virtual std::string temperature() const { return "unspecified"; }
};

}  // namespace possum
