#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evsl {

enum class ErrorCode {
  invalid_argument,
  degenerate_projection,
  degenerate_geometry,
  unstable_triangulation,
  unidentifiable,
  sync_not_found,
  degenerate_normal,
  empty_mask,
  parse,
  schema,
  io,
  config,
  stage,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::degenerate_projection: return "degenerate_projection";
    case ErrorCode::degenerate_geometry: return "degenerate_geometry";
    case ErrorCode::unstable_triangulation: return "unstable_triangulation";
    case ErrorCode::unidentifiable: return "unidentifiable";
    case ErrorCode::sync_not_found: return "sync_not_found";
    case ErrorCode::degenerate_normal: return "degenerate_normal";
    case ErrorCode::empty_mask: return "empty_mask";
    case ErrorCode::parse: return "parse";
    case ErrorCode::schema: return "schema";
    case ErrorCode::io: return "io";
    case ErrorCode::config: return "config";
    case ErrorCode::stage: return "stage";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised for (near-)parallel ray pairs; `condition` is |a.dir x b.dir|.
class TriangulationError : public Error {
 public:
  TriangulationError(double condition, const std::string& what)
      : Error(ErrorCode::unstable_triangulation, what), condition_(condition) {}

  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

}  // namespace evsl
