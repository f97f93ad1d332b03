#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace episeg {

enum class ErrorKind {
  kInvalidArgument,
  kFormat,
  kResolution,
  kPredictor,
  kConfiguration,
  kDependency,
  kGeneration,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Base of every error thrown by the library. The kind is what callers
/// (and the CLI exit-code mapping) dispatch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define EPISEG_DEFINE_ERROR(Name, Kind)                                    \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& message) : Error(Kind, message) {}    \
  };

EPISEG_DEFINE_ERROR(InvalidArgument, ErrorKind::kInvalidArgument)
EPISEG_DEFINE_ERROR(FormatError, ErrorKind::kFormat)
EPISEG_DEFINE_ERROR(ResolutionError, ErrorKind::kResolution)
EPISEG_DEFINE_ERROR(PredictorError, ErrorKind::kPredictor)
EPISEG_DEFINE_ERROR(ConfigurationError, ErrorKind::kConfiguration)
EPISEG_DEFINE_ERROR(DependencyError, ErrorKind::kDependency)
EPISEG_DEFINE_ERROR(GenerationError, ErrorKind::kGeneration)

#undef EPISEG_DEFINE_ERROR

}  // namespace episeg
