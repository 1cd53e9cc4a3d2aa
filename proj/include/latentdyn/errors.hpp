#pragma once

#include <stdexcept>
#include <string>

namespace latentdyn {

/// Tensor or matrix shapes do not line up.
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// A computation produced NaN/Inf or diverged.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value; `field()` names the offending key.
class ConfigError : public std::invalid_argument {
  public:
    ConfigError(std::string field, const std::string& what)
        : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

  private:
    std::string field_;
};

/// Input data violates a precondition (disconnected mesh, rank deficiency, ...).
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A required file is missing or unreadable.
class FileError : public std::runtime_error {
  public:
    FileError(std::string path, const std::string& what)
        : std::runtime_error(what + ": " + path), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

  private:
    std::string path_;
};

} // namespace latentdyn
