#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace famda {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FormatErrorKind {
  kBadMagic,
  kBadVersion,
  kTruncated,
  kRunOutOfBounds,
  kOverlappingRuns,
  kAreaMismatch,
  kEmptyMask,
  kTrailingBytes,
};

const char* to_string(FormatErrorKind kind);

/// Raised by binary decoders; carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, std::size_t offset, const std::string& detail = {});

  FormatErrorKind kind() const { return kind_; }
  std::size_t offset() const { return offset_; }

 private:
  FormatErrorKind kind_;
  std::size_t offset_;
};

}  // namespace famda
