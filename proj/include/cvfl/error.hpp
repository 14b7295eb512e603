#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cvfl {

// Bad arguments to a library operation (dimension mismatch, empty batch, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Parameters that cannot be jointly satisfied (infeasible delegation, e < 3, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A report or message that does not conform to the round's delegation plan.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file contents. offset is the byte position where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Wraps a failure raised while computing one client's update.
class ClientError : public std::runtime_error {
 public:
  ClientError(int client, const std::string& what)
      : std::runtime_error("client " + std::to_string(client) + ": " + what), client_(client) {}

  int client() const noexcept { return client_; }

 private:
  int client_;
};

}  // namespace cvfl
