#pragma once

#include <stdexcept>
#include <string>

namespace retseg {

// Process exit codes used by the command-line tool.
enum class ErrorKind { config = 2, data = 3, runtime = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

#define RETSEG_DEFINE_ERROR(Name, Kind)                                          \
  class Name : public Error {                                                  \
   public:                                                                     \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {}   \
  };

// Invalid hyperparameters, non-power-of-two sizes, malformed config files.
RETSEG_DEFINE_ERROR(ConfigError, config)
// Checkpoint missing or incompatible with the requested network.
RETSEG_DEFINE_ERROR(CheckpointError, config)

RETSEG_DEFINE_ERROR(DatasetLayoutError, data)
RETSEG_DEFINE_ERROR(IntegrityError, data)
RETSEG_DEFINE_ERROR(EmptyManifestError, data)
// Unlabeled sample where a label is required, or the reverse.
RETSEG_DEFINE_ERROR(DataError, data)
RETSEG_DEFINE_ERROR(PreconditionError, data)
RETSEG_DEFINE_ERROR(ValidationError, data)
RETSEG_DEFINE_ERROR(EmptyFovError, data)
RETSEG_DEFINE_ERROR(UndefinedMetricError, data)
RETSEG_DEFINE_ERROR(InsufficientSamplesError, data)

RETSEG_DEFINE_ERROR(ShapeError, runtime)
RETSEG_DEFINE_ERROR(NumericalError, runtime)
RETSEG_DEFINE_ERROR(EnsembleError, runtime)
RETSEG_DEFINE_ERROR(IoError, runtime)

#undef RETSEG_DEFINE_ERROR

}  // namespace retseg
