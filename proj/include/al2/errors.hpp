#pragma once

#include <stdexcept>
#include <string>

namespace al2 {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when an op would emit NaN/Inf from finite inputs, or when a loss
// turns non-finite during training. Never swallowed silently.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  ConfigError(int line_no, const std::string& what_arg)
      : std::runtime_error("line " + std::to_string(line_no) + ": " + what_arg),
        line(line_no),
        message(what_arg) {}
  int line;
  std::string message;  // what_arg without the line prefix, for rewrapping
};

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace al2
