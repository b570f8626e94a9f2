#pragma once

#include <stdexcept>
#include <string>

namespace fridu {

/// Broad failure class, used by the CLI to pick an exit code.
enum class ErrorKind { validation, compute };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define FRIDU_DEFINE_ERROR(Name, Kind)                                              \
  class Name : public Error {                                                       \
   public:                                                                          \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, #Name ": " + what) {} \
  };

FRIDU_DEFINE_ERROR(ParseError, validation)
FRIDU_DEFINE_ERROR(ValidationError, validation)
FRIDU_DEFINE_ERROR(DimensionError, validation)
FRIDU_DEFINE_ERROR(IndexError, validation)
FRIDU_DEFINE_ERROR(ShapeError, validation)
FRIDU_DEFINE_ERROR(ConfigError, validation)
FRIDU_DEFINE_ERROR(LookupError, validation)
FRIDU_DEFINE_ERROR(MissingArtifactError, validation)
FRIDU_DEFINE_ERROR(EmptyDatasetError, validation)
FRIDU_DEFINE_ERROR(ScaleDegenerateError, validation)
FRIDU_DEFINE_ERROR(SolverError, compute)
FRIDU_DEFINE_ERROR(SingularSystemError, compute)
FRIDU_DEFINE_ERROR(DivergenceError, compute)
FRIDU_DEFINE_ERROR(NonFiniteError, compute)
FRIDU_DEFINE_ERROR(IoError, compute)

#undef FRIDU_DEFINE_ERROR

}  // namespace fridu
