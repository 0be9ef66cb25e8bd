#include "rxlora/error.hpp"

namespace rxlora {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return "UsageError";
    case ErrorKind::kIo: return "IoError";
    case ErrorKind::kSchema: return "SchemaError";
    case ErrorKind::kInvariantViolation: return "InvariantViolation";
    case ErrorKind::kMalformedItem: return "MalformedItem";
    case ErrorKind::kDuplicateHerb: return "DuplicateHerb";
    case ErrorKind::kEmptyPrescription: return "EmptyPrescription";
    case ErrorKind::kEmptyCorpus: return "EmptyCorpus";
    case ErrorKind::kEmptyInput: return "EmptyInput";
    case ErrorKind::kSpecInfeasible: return "SpecInfeasible";
    case ErrorKind::kInvalidTokenId: return "InvalidTokenId";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kNonFiniteInput: return "NonFiniteInput";
    case ErrorKind::kNotScalar: return "NotScalar";
    case ErrorKind::kDisconnectedGraph: return "DisconnectedGraph";
    case ErrorKind::kSequenceTooLong: return "SequenceTooLong";
    case ErrorKind::kPromptTooLong: return "PromptTooLong";
    case ErrorKind::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::kCheckpointMismatch: return "CheckpointMismatch";
    case ErrorKind::kPairCountMismatch: return "PairCountMismatch";
  }
  return "Error";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage:
      return 1;
    case ErrorKind::kNonFiniteInput:
    case ErrorKind::kNonFiniteLoss:
    case ErrorKind::kShapeMismatch:
    case ErrorKind::kNotScalar:
    case ErrorKind::kDisconnectedGraph:
      return 3;
    default:
      return 2;
  }
}

}  // namespace rxlora
