#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wscl {

enum class ErrorCode {
  Dimension,        // shape mismatch between operands
  Numeric,          // NaN or Inf produced or consumed
  InvalidArgument,  // precondition on a scalar argument violated
  LabelRange,       // label outside the declared class range
  MaskedLabel,      // a label's class is masked out of the loss
  MissingGradient,  // optimizer asked to update a tensor with no gradient
  NotScalar,        // backward called on a non-scalar tensor
  BadMagic,         // dataset file does not start with the expected magic
  Truncated,        // dataset file ends before the declared payload
  InvalidData,      // dataset content violates an invariant
  Io,               // filesystem failure
  Disjointness,     // dream classes overlap continual-learning classes
  EmptyInput,       // an operation received an empty dataset or view
  State,            // operation not valid in the object's current state
  Config,           // experiment configuration rejected
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the category prefix.
  const std::string& detail() const noexcept { return detail_; }

private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace wscl
