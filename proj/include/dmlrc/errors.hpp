#pragma once

#include <stdexcept>
#include <string>

namespace dmlrc {

// Error categories map 1:1 onto the process exit codes used by the CLI and
// the status codes of the C API.
enum class ErrorKind : int {
  kConfig = 2,   // bad options, schema, or scenario setup
  kData = 3,     // malformed or insufficient input data
  kNumeric = 4,  // singular designs, degenerate variances, non-convergence
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

// Non-convergence of an iterative solver; carries the iteration count.
struct ConvergenceError : NumericError {
  ConvergenceError(const std::string& what, long iterations)
      : NumericError(what), iterations(iterations) {}
  long iterations;
};

}  // namespace dmlrc
