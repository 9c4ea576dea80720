#pragma once

#include <stdexcept>
#include <string>

namespace dlnlab {

enum class ErrorKind {
  InvalidArgument,
  DimensionMismatch,
  NonInvertiblePotential,
  InvariantViolation,
  NewtonStalled,
  SingularJacobian,
  Infeasible,
  Unbounded,
  NoConvergedRuns,
  GridDiverged,
  Io,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonInvertiblePotential: return "NonInvertiblePotential";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::NewtonStalled: return "NewtonStalled";
    case ErrorKind::SingularJacobian: return "SingularJacobian";
    case ErrorKind::Infeasible: return "Infeasible";
    case ErrorKind::Unbounded: return "Unbounded";
    case ErrorKind::NoConvergedRuns: return "NoConvergedRuns";
    case ErrorKind::GridDiverged: return "GridDiverged";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const char* what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace dlnlab
