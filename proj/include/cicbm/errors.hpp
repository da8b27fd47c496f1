#pragma once

#include <stdexcept>
#include <string>

namespace cicbm {

// Every failure raised by the core library carries one of these kinds. The
// C API and the CLI map them onto status codes / process exit codes.
enum class ErrorKind {
  Validation,    // bad argument, non-finite value, config error
  Dimension,     // shapes that do not agree
  Disjointness,  // class ids re-declared across phases
  Consistency,   // persisted state whose parts disagree
  StaleReport,   // filter report applied to a set it was not built against
  Divergence,    // non-finite loss or gradient during optimization
  Format,        // bad magic / unknown dtype / malformed structured text
  Corruption,    // byte counts that do not match the header
  Version,       // unsupported schema or format version
  Io,            // filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Process exit code for an error kind: 2 validation, 3 divergence, 4 I/O.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Divergence:
      return 3;
    case ErrorKind::Format:
    case ErrorKind::Corruption:
    case ErrorKind::Version:
    case ErrorKind::Io:
      return 4;
    default:
      return 2;
  }
}

const char* to_string(ErrorKind kind);

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace cicbm
