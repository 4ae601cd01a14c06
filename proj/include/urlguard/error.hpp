#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace urlguard {

enum class Errc {
  kMalformedUrl,
  kShapeMismatch,
  kDegenerateValidation,
  kDegenerateLabels,
  kEmptyTraining,
  kSchemaMismatch,
  kLengthMismatch,
  kMissingColumn,
  kEmptyFile,
  kMalformedRow,
  kTooFewGroups,
  kBadMagic,
  kVersionUnsupported,
  kChecksumMismatch,
  kIo,
  kInvalidArgument,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::kMalformedUrl: return "MalformedUrl";
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kDegenerateValidation: return "DegenerateValidation";
    case Errc::kDegenerateLabels: return "DegenerateLabels";
    case Errc::kEmptyTraining: return "EmptyTraining";
    case Errc::kSchemaMismatch: return "SchemaMismatch";
    case Errc::kLengthMismatch: return "LengthMismatch";
    case Errc::kMissingColumn: return "MissingColumn";
    case Errc::kEmptyFile: return "EmptyFile";
    case Errc::kMalformedRow: return "MalformedRow";
    case Errc::kTooFewGroups: return "TooFewGroups";
    case Errc::kBadMagic: return "BadMagic";
    case Errc::kVersionUnsupported: return "VersionUnsupported";
    case Errc::kChecksumMismatch: return "ChecksumMismatch";
    case Errc::kIo: return "Io";
    case Errc::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

// All library failures are reported through this one exception type; the
// code is what callers (CLI exit codes, HTTP status mapping) dispatch on.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }
  std::string_view code_name() const noexcept { return to_string(code_); }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace urlguard
