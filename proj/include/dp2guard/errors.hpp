#pragma once

#include <stdexcept>
#include <string>

namespace dp2guard {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DP2GUARD_DEFINE_ERROR(Name)        \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

DP2GUARD_DEFINE_ERROR(OverflowError);
DP2GUARD_DEFINE_ERROR(DimensionMismatch);
DP2GUARD_DEFINE_ERROR(ShapeMismatch);
DP2GUARD_DEFINE_ERROR(FormatError);
DP2GUARD_DEFINE_ERROR(CountMismatch);
DP2GUARD_DEFINE_ERROR(EmptyClientError);
DP2GUARD_DEFINE_ERROR(PreconditionError);
DP2GUARD_DEFINE_ERROR(ClientSetMismatch);
DP2GUARD_DEFINE_ERROR(WeightError);
DP2GUARD_DEFINE_ERROR(PhaseError);
DP2GUARD_DEFINE_ERROR(DegenerateError);
DP2GUARD_DEFINE_ERROR(TooFewClients);
DP2GUARD_DEFINE_ERROR(AllZeroTrust);
DP2GUARD_DEFINE_ERROR(NotFound);
DP2GUARD_DEFINE_ERROR(IOError);
DP2GUARD_DEFINE_ERROR(ConfigError);

#undef DP2GUARD_DEFINE_ERROR

}  // namespace dp2guard
