#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rxlora {

enum class ErrorKind {
  kUsage,
  kIo,
  kSchema,
  kInvariantViolation,
  kMalformedItem,
  kDuplicateHerb,
  kEmptyPrescription,
  kEmptyCorpus,
  kEmptyInput,
  kSpecInfeasible,
  kInvalidTokenId,
  kShapeMismatch,
  kNonFiniteInput,
  kNotScalar,
  kDisconnectedGraph,
  kSequenceTooLong,
  kPromptTooLong,
  kNonFiniteLoss,
  kCheckpointMismatch,
  kPairCountMismatch,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; the kind selects the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// 1 usage error, 2 data error, 3 numeric failure.
int exit_code_for(ErrorKind kind);

}  // namespace rxlora
