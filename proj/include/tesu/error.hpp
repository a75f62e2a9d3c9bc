#pragma once

#include <stdexcept>
#include <string>

namespace tesu {

enum class ErrorKind {
  kDimension,
  kEmptySupervision,
  kState,
  kFormat,
  kDependency,
  kContextOverflow,
  kConfig,
  kIo,
  kInvalidArgument,
  kInternal,
};

const char* error_kind_name(ErrorKind kind);

// Every failure surfaced by the library carries a category so the CLI can
// print "error[<category>]: ..." and tests can match on the kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  const char* category() const { return error_kind_name(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace tesu
