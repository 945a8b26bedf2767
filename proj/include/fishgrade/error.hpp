#pragma once

#include <stdexcept>
#include <string>

namespace fishgrade {

// Base for every error raised by the library. Subclasses exist so callers
// (CLI exit codes, HTTP status mapping, per-nucleus containment) can react
// to the category without parsing messages.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value. `field` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Bad or unreadable external input (files, logits, request bodies).
class InputError : public Error {
 public:
  using Error::Error;
};

// Tensor/file layout mismatch. Message names the offending tensor.
class FormatError : public InputError {
 public:
  using InputError::InputError;
};

// Star polygon with fewer than three positive rays.
class DegeneratePolygonError : public Error {
 public:
  using Error::Error;
};

class OutOfBoundsError : public Error {
 public:
  using Error::Error;
};

class PlacementError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A requested item (nucleus, CAM, session) does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace fishgrade
