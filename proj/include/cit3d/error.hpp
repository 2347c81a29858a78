#pragma once

#include <stdexcept>
#include <string>

namespace cit3d {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Mismatched image / buffer shapes.
class DimensionError : public Error {
  public:
    using Error::Error;
};

/// Pearson correlation requested on a constant (or near-constant) signal.
class DegenerateVarianceError : public Error {
  public:
    using Error::Error;
};

/// Prompt modality not allowed for the requested purpose.
class InvalidModalityError : public Error {
  public:
    using Error::Error;
};

/// Invalid configuration; `key()` names the offending config key.
class ConfigError : public Error {
  public:
    ConfigError(std::string key, const std::string& message)
        : Error(key + ": " + message), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

  private:
    std::string key_;
};

/// File-level failure; `path()` names the file involved.
class IoError : public Error {
  public:
    IoError(std::string path, const std::string& message)
        : Error(path + ": " + message), path_(std::move(path)) {}
    const std::string& path() const { return path_; }

  private:
    std::string path_;
};

} // namespace cit3d
