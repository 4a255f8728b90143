#include "regcd/error.hpp"

namespace regcd {

const char* category_name(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::Usage: return "usage";
    case ErrorCategory::Validation: return "validation";
    case ErrorCategory::Numeric: return "numeric";
    case ErrorCategory::Io: return "io";
  }
  return "unknown";
}

}  // namespace regcd
