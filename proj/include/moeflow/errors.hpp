#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace moeflow {

enum class ErrorKind {
  InvalidShape,
  Numeric,
  Contract,
  Tape,
  Parse,
  Config,
  MissingFile,
  InsufficientData,
  EmptyInput,
  UndefinedMetric,
  Io,
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidShape: return "invalid-shape";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Tape: return "tape";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Config: return "config";
    case ErrorKind::MissingFile: return "missing-file";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string msg)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + msg),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace moeflow
