#pragma once

#include <stdexcept>
#include <string>

namespace pclf {

// Error kinds surfaced by the library. Each maps to one failure class used
// across modules so callers can catch by category.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GenerationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PCLF_REQUIRE(cond, ExcType, msg)            \
  do {                                              \
    if (!(cond)) throw ExcType(std::string(msg));   \
  } while (0)

}  // namespace pclf
