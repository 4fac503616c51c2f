#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace real {

/// Machine-readable classification carried by every library exception.
enum class ErrorKind {
  shape,
  singular,
  parameter,
  data,
  empty_base,
  protocol,
  frozen,
  training,
  degenerate_row,
  contract,
  plan,
  evaluation,
  exemplar_violation,
  bad_magic,
  truncated,
  trailing_data,
  label_range,
  non_finite,
  corruption,
  config,
  io,
  usage,
};

inline const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::singular: return "singular";
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::data: return "data";
    case ErrorKind::empty_base: return "empty_base";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::frozen: return "frozen";
    case ErrorKind::training: return "training";
    case ErrorKind::degenerate_row: return "degenerate_row";
    case ErrorKind::contract: return "contract";
    case ErrorKind::plan: return "plan";
    case ErrorKind::evaluation: return "evaluation";
    case ErrorKind::exemplar_violation: return "exemplar_violation";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::trailing_data: return "trailing_data";
    case ErrorKind::label_range: return "label_range";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::corruption: return "corruption";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::usage: return "usage";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Cholesky breakdown; `pivot()` is the zero-based index of the failing diagonal.
class SingularError : public Error {
 public:
  SingularError(std::size_t pivot, const std::string& msg)
      : Error(ErrorKind::singular, msg), pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

/// Errors tied to a position: a matrix row, a training epoch, or a file byte offset.
class LocatedError : public Error {
 public:
  LocatedError(ErrorKind kind, std::uint64_t where, const std::string& msg)
      : Error(kind, msg), where_(where) {}
  std::uint64_t where() const noexcept { return where_; }

 private:
  std::uint64_t where_;
};

/// Wraps an error raised inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& inner)
      : Error(inner.kind(), "[" + stage + "] " + inner.what()),
        stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace real
