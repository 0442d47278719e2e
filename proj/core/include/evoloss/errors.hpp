#pragma once

#include <stdexcept>
#include <string>

namespace evoloss {

// Bad user input: unknown env name, malformed config, invalid CLI combination.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed program text. Line numbers are 1-based; 0 means "whole file".
struct ParseError : std::runtime_error {
  int line;
  ParseError(int line_, const std::string& what_)
      : std::runtime_error("line " + std::to_string(line_) + ": " + what_), line(line_) {}
};

// Violated internal contract (caller misuse of a library API).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace evoloss
