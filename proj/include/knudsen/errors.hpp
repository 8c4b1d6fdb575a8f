#pragma once

#include <stdexcept>
#include <string>

namespace knudsen {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define KNUDSEN_DEFINE_ERROR(Name)              \
  class Name : public Error {                   \
   public:                                      \
    explicit Name(const std::string& what)      \
        : Error(std::string(#Name ": ") + what) {} \
  }

// geometry
KNUDSEN_DEFINE_ERROR(NonPositiveSpeed);
KNUDSEN_DEFINE_ERROR(RootNotBracketed);
KNUDSEN_DEFINE_ERROR(PatchSearchFailed);
// velocity law
KNUDSEN_DEFINE_ERROR(QuadratureNotConverged);
KNUDSEN_DEFINE_ERROR(NotInward);
// transport / coupling
KNUDSEN_DEFINE_ERROR(ExplosionGuardTripped);
KNUDSEN_DEFINE_ERROR(ResidualRejectionBudgetExceeded);
KNUDSEN_DEFINE_ERROR(LagTooLarge);
// stats
KNUDSEN_DEFINE_ERROR(TooFewSamples);
KNUDSEN_DEFINE_ERROR(DegenerateWindow);
KNUDSEN_DEFINE_ERROR(MomentDiverges);
// configuration
KNUDSEN_DEFINE_ERROR(ConfigError);

#undef KNUDSEN_DEFINE_ERROR

}  // namespace knudsen
