#pragma once

#include <stdexcept>
#include <string>

namespace tpnerf {

/// Invalid arguments to an operation (bad shapes, out-of-range indices, ...).
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

/// A value outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// Failure reading a scene, image, depth map or checkpoint from disk.
class LoadError : public std::runtime_error {
 public:
  explicit LoadError(const std::string& what) : std::runtime_error(what) {}
};

/// Rejected configuration (unknown keys, invalid values).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] void throw_input(const std::string& what);

}  // namespace tpnerf
