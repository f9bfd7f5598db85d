#pragma once

#include <stdexcept>
#include <string>

namespace anomseg {

// Failure classes map onto the CLI exit codes (2, 3, 4).
enum class ErrorKind { kConfig, kData, kNumeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error ConfigError(const std::string& what) { return Error(ErrorKind::kConfig, what); }
inline Error DataError(const std::string& what) { return Error(ErrorKind::kData, what); }
inline Error NumericError(const std::string& what) { return Error(ErrorKind::kNumeric, what); }

}  // namespace anomseg
