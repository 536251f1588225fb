#pragma once

#include <stdexcept>
#include <string>

namespace prt {

/// Root of the toolkit's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments or violated preconditions.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A value outside the permitted range (e.g. a segment past the recording end).
class RangeError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

/// Resampling above the source rate is not supported.
class UnsupportedUpsampleError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

/// Missing or unreadable input data.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Input data readable but structurally wrong (bad header, wrong rate, ...).
class FormatError : public LoadError {
 public:
  using LoadError::LoadError;
};

/// Filesystem write/read failures on artifacts we produce.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace prt
