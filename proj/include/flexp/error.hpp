#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flexp {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape disagreement. The message names the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An object was used in a state that does not permit the call
/// (consumed tape, pending step already open, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Caller supplied an out-of-range value.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Non-finite numbers reached a place that requires finite ones.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Client/server frame exchange violated the step protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class RegistrationError : public Error {
 public:
  using Error::Error;
};

/// Malformed wire frame. `offset()` is the byte position where decoding
/// stopped.
class DecodeError : public Error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : Error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Filesystem read or write failed. The message names the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Configuration rejected. `key_path()` is the dotted path of the bad key,
/// e.g. "plan.clients[2].q".
class ValidationError : public Error {
 public:
  ValidationError(const std::string& key_path, const std::string& what)
      : Error(key_path + ": " + what), key_path_(key_path) {}
  const std::string& key_path() const noexcept { return key_path_; }

 private:
  std::string key_path_;
};

}  // namespace flexp
