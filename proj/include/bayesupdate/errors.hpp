#pragma once

#include <stdexcept>
#include <string>

namespace bayesupdate {

/// A factorisation or solve failed because the input was numerically
/// degenerate (singular or indefinite where positive definite is required).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool condition, const char* message) {
  if (!condition) throw std::invalid_argument(message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

}  // namespace detail
}  // namespace bayesupdate
