#pragma once

#include <stdexcept>
#include <string>

namespace mfgdta {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NetworkErrorKind {
  kDuplicateNode,
  kUnknownNode,
  kNonpositiveLength,
  kNonpositiveCapacity,
  kMissingCapacity,
  kInvalidCost,
  kNegativeDemand,
  kDemandAtDestination,
  kNoDestination,
  kDestinationWithoutInflow,
  kNoOrigin,
  kUnreachableNode,
  kDeadEndNode,
};

inline const char* to_string(NetworkErrorKind kind) {
  switch (kind) {
    case NetworkErrorKind::kDuplicateNode: return "duplicate node";
    case NetworkErrorKind::kUnknownNode: return "unknown node";
    case NetworkErrorKind::kNonpositiveLength: return "nonpositive length";
    case NetworkErrorKind::kNonpositiveCapacity: return "nonpositive capacity";
    case NetworkErrorKind::kMissingCapacity: return "missing capacity";
    case NetworkErrorKind::kInvalidCost: return "invalid cost coefficients";
    case NetworkErrorKind::kNegativeDemand: return "negative demand";
    case NetworkErrorKind::kDemandAtDestination: return "demand at destination";
    case NetworkErrorKind::kNoDestination: return "no destination";
    case NetworkErrorKind::kDestinationWithoutInflow: return "destination without incoming link";
    case NetworkErrorKind::kNoOrigin: return "no origin";
    case NetworkErrorKind::kUnreachableNode: return "unreachable node";
    case NetworkErrorKind::kDeadEndNode: return "node cannot reach destination";
  }
  return "network error";
}

class NetworkError : public Error {
 public:
  NetworkError(NetworkErrorKind kind, const std::string& detail)
      : Error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

  NetworkErrorKind kind() const noexcept { return kind_; }

 private:
  NetworkErrorKind kind_;
};

/// Grid/network incompatibility (CFL, non-integer cell counts, nesting).
class GridError : public Error {
 public:
  using Error::Error;
};

/// Configuration file could not be parsed or validated.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numerical invariant of a scheme was violated (e.g. negative density).
class SchemeError : public Error {
 public:
  using Error::Error;
};

}  // namespace mfgdta
