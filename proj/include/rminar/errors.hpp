#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rminar {

enum class ErrorKind {
  // input / configuration problems
  InvalidSpec,
  ParseError,
  NegativeOperand,
  TooShort,
  NotSupported,
  // numerical failures
  SingularMatrix,
  NoConvergence,
  Diverges,
  Overflow,
  InnerOptFailed,
  NotOverdispersed,
  DegenerateTail,
  ZeroVariance,
  NumericalBreakdown,
  NonpositiveVariance,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::NegativeOperand: return "NegativeOperand";
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::NotSupported: return "NotSupported";
    case ErrorKind::SingularMatrix: return "SingularMatrix";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::Diverges: return "Diverges";
    case ErrorKind::Overflow: return "Overflow";
    case ErrorKind::InnerOptFailed: return "InnerOptFailed";
    case ErrorKind::NotOverdispersed: return "NotOverdispersed";
    case ErrorKind::DegenerateTail: return "DegenerateTail";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::NumericalBreakdown: return "NumericalBreakdown";
    case ErrorKind::NonpositiveVariance: return "NonpositiveVariance";
  }
  return "Unknown";
}

/// True for failures caused by the data or the numerics rather than by the
/// caller's input (the CLI maps these to exit code 3).
constexpr bool is_numerical(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidSpec:
    case ErrorKind::ParseError:
    case ErrorKind::NegativeOperand:
    case ErrorKind::TooShort:
    case ErrorKind::NotSupported:
      return false;
    default:
      return true;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// what() without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace rminar
