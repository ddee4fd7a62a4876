#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace msquid {

// Typed failure carrying a module-specific kind enum. Callers dispatch on
// kind(); what() holds a human-readable diagnostic.
template <typename Kind>
class Error : public std::runtime_error {
 public:
  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace msquid
