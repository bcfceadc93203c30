#pragma once

#include <stdexcept>
#include <string>

namespace fcad {

/// Base error; what() is prefixed with the module that raised it.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message), module_(std::move(module)) {}

  const std::string& module() const { return module_; }

 private:
  std::string module_;
};

}  // namespace fcad
