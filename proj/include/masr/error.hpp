#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace masr {

// Runtime failure carrying a short machine-readable kind ("io", "format",
// "config", "shape", "non_finite", ...) next to the human message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Invalid or unknown configuration key; `key()` names the offender.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error("config", message), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace masr
