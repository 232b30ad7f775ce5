#pragma once

#include <stdexcept>
#include <string>

namespace ynet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimensions disagree with what an op or a parameter slot expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated binary/text files (checkpoints, indexes, PNGs).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Dataset layout problems. `path()` names the offending file.
class DatasetError : public Error {
 public:
  DatasetError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace ynet
