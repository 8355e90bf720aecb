#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace loghive {

enum class ErrorCode {
  MalformedLine,
  BadRule,
  NoActiveKey,
  UnknownKeyId,
  AuthFailure,
  TruncatedSegment,
  CorruptRingFile,
  RecordTooLarge,
  StorageFailure,
  ArchiveSinkFailure,
  ConfigInvalid,
  CorruptSegment,
  EmptyWindow,
  BadWeights,
  CategoryMismatch,
  SinkUnreachable,
  ShortWrite,
  SpecInvalid,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the engine carries one of the codes above so
// callers (notably the CLI exit-code mapping) can dispatch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// True for the classes of failure that indicate at-rest or in-transit corruption.
bool is_integrity_error(ErrorCode code);

}  // namespace loghive
