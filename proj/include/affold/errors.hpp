#pragma once

#include <stdexcept>
#include <string>

namespace affold {

/// Base of every error raised by the library. The CLI maps subclasses that
/// derive from `UsageError` to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
public:
  using Error::Error;
};

#define AFFOLD_DEFINE_ERROR(Name, Base)                                        \
  class Name : public Base {                                                   \
  public:                                                                      \
    explicit Name(const std::string& what) : Base(#Name ": " + what) {}        \
  }

AFFOLD_DEFINE_ERROR(DimensionError, Error);
AFFOLD_DEFINE_ERROR(ShapeError, Error);
AFFOLD_DEFINE_ERROR(ValidationError, Error);
AFFOLD_DEFINE_ERROR(NotFeedForward, Error);
AFFOLD_DEFINE_ERROR(CannotCollapseNonlinear, Error);
AFFOLD_DEFINE_ERROR(CannotExcise, Error);
AFFOLD_DEFINE_ERROR(TraceError, Error);
AFFOLD_DEFINE_ERROR(LabelError, Error);
AFFOLD_DEFINE_ERROR(FormatError, Error);
AFFOLD_DEFINE_ERROR(TruncationError, Error);
AFFOLD_DEFINE_ERROR(VersionError, Error);
AFFOLD_DEFINE_ERROR(IoError, Error);
AFFOLD_DEFINE_ERROR(RangeError, UsageError);
AFFOLD_DEFINE_ERROR(ConfigError, UsageError);

#undef AFFOLD_DEFINE_ERROR

} // namespace affold
