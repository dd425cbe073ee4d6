#pragma once

#include <stdexcept>
#include <string>

namespace relpose {

// Base of every error raised by the library. Subclasses name the failed
// contract so callers can branch on the type rather than on the message.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RELPOSE_DEFINE_ERROR(Name)      \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

RELPOSE_DEFINE_ERROR(ShapeError);
RELPOSE_DEFINE_ERROR(RangeError);
RELPOSE_DEFINE_ERROR(ContractError);
RELPOSE_DEFINE_ERROR(DimensionError);
RELPOSE_DEFINE_ERROR(DegenerateDescriptorError);
RELPOSE_DEFINE_ERROR(FormatError);
RELPOSE_DEFINE_ERROR(DepthError);
RELPOSE_DEFINE_ERROR(BehindCameraError);
RELPOSE_DEFINE_ERROR(DegenerateSampleError);
RELPOSE_DEFINE_ERROR(EmptySolution);
RELPOSE_DEFINE_ERROR(NoPoseError);
RELPOSE_DEFINE_ERROR(LabelError);
RELPOSE_DEFINE_ERROR(GenerationError);
RELPOSE_DEFINE_ERROR(DataError);
RELPOSE_DEFINE_ERROR(LocalizationFailure);

#undef RELPOSE_DEFINE_ERROR

}  // namespace relpose
