#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace csfda {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Thrown when an input value violates a documented precondition (bad
// distribution, shape mismatch, relation violation, ...). Maps to
// CSF_STATUS_INVALID at the C boundary and exit code 2 in the CLI.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what)
      : std::invalid_argument(what) {}
};

// Thrown for failures that are not input errors (non-finite loss, I/O on a
// path that was expected writable, ...). Exit code 1 in the CLI.
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

// Probability logs are clamped at this floor everywhere (0 log 0 := 0).
inline constexpr double kProbFloor = 1e-12;

inline double clamped_log(double p) {
  return std::log(p < kProbFloor ? kProbFloor : p);
}

}  // namespace csfda
