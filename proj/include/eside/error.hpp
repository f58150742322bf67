#pragma once

#include <stdexcept>
#include <string>

namespace eside {

// Root of everything the library throws on bad input or data.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition on an argument was violated (range, shape, count).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

enum class FormatCode {
  bad_magic,
  version_mismatch,
  length_mismatch,
  crc_mismatch,
  non_finite,
  corrupt_header,
  unsupported_format,
  dimension_overflow,
  io,
};

inline const char* to_string(FormatCode code) {
  switch (code) {
    case FormatCode::bad_magic: return "bad_magic";
    case FormatCode::version_mismatch: return "version_mismatch";
    case FormatCode::length_mismatch: return "length_mismatch";
    case FormatCode::crc_mismatch: return "crc_mismatch";
    case FormatCode::non_finite: return "non_finite";
    case FormatCode::corrupt_header: return "corrupt_header";
    case FormatCode::unsupported_format: return "unsupported_format";
    case FormatCode::dimension_overflow: return "dimension_overflow";
    case FormatCode::io: return "io";
  }
  return "unknown";
}

// A file or stream failed to decode. code() says which check tripped.
class FormatError : public Error {
 public:
  FormatError(FormatCode code, const std::string& what)
      : Error(std::string(to_string(code)) + ": " + what), code_(code) {}

  FormatCode code() const noexcept { return code_; }

 private:
  FormatCode code_;
};

// Training or evaluation produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace eside
