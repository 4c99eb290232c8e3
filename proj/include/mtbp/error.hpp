#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mtbp {

// Failure classes, kept coarse on purpose: they map 1:1 onto process exit
// codes in the command-line tool (validation -> 2, guard -> 3, data -> 5).
enum class ErrorKind {
  validation,  // malformed input, bad configuration, broken invariant
  guard,       // a resource guard tripped (enumeration size, rejection limit)
  data,        // structurally valid input the model cannot explain
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace mtbp
