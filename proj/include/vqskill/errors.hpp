#pragma once

#include <stdexcept>
#include <string>

namespace vqskill {

// Each family maps to one CLI exit code (see tools/vqskill.cpp).

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  ParseError(int line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] int line() const { return line_; }

 private:
  int line_;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class ClientError : public std::runtime_error {
 public:
  ClientError(const std::string& what, int attempts)
      : std::runtime_error(what + " (after " + std::to_string(attempts) + " attempt(s))"), attempts_(attempts) {}
  [[nodiscard]] int attempts() const { return attempts_; }

 private:
  int attempts_;
};

}  // namespace vqskill
