#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedseg {

// Error taxonomy shared by the core, the C API and the CLI exit codes.
enum class ErrorKind : int {
  Validation = 2,  // bad config, bad shapes, bad arguments
  Runtime = 3,     // training divergence and other runtime failures
  Io = 4,          // filesystem and codec failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// NaN/Inf loss during local training.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& msg)
      : Error(ErrorKind::Runtime, msg) {}
};

[[noreturn]] inline void throw_validation(const std::string& msg) {
  throw Error(ErrorKind::Validation, msg);
}
[[noreturn]] inline void throw_runtime(const std::string& msg) {
  throw Error(ErrorKind::Runtime, msg);
}
[[noreturn]] inline void throw_io(const std::string& msg) {
  throw Error(ErrorKind::Io, msg);
}

std::string format_with_commas(std::uint64_t v);

// printf-style helper; kept small so call sites stay terse.
std::string strfmt(const char* fmt, ...);

}  // namespace fedseg
