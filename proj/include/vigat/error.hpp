#ifndef VIGAT_ERROR_HPP
#define VIGAT_ERROR_HPP

#include <stdexcept>
#include <string>

namespace vigat {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar or index argument is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A trace no longer matches the parameters it is used with.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

/// Label vector does not satisfy the output mode.
class LabelError : public Error {
 public:
  using Error::Error;
};

/// Dataset-level problems (empty split, inconsistent manifest).
class DatasetError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Binary container could not be decoded or failed validation.
class FormatError : public Error {
 public:
  enum class Kind {
    kBadMagic,
    kBadVersion,
    kTruncated,
    kDimension,
    kRecordCount,
    kNonFinite,
    kRange,
    kSortOrder,
    kStringIndex,
    kTrailingBytes,
    kChecksum,
  };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace vigat

#endif  // VIGAT_ERROR_HPP
