#pragma once

#include <stdexcept>
#include <string>

namespace dti {

// Base class for every error thrown by this library. Each condition gets its
// own type so callers (and tests) can catch precisely.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define DTI_DEFINE_ERROR(NAME)                                          \
    class NAME : public Error {                                         \
    public:                                                             \
        explicit NAME(const std::string& what) : Error(#NAME ": " + what) {} \
    }

// thermal
DTI_DEFINE_ERROR(CropTooLarge);
DTI_DEFINE_ERROR(NonFiniteTemperature);
DTI_DEFINE_ERROR(EmptyInput);

// tensor / ops
DTI_DEFINE_ERROR(ShapeMismatch);
DTI_DEFINE_ERROR(InvalidRate);
DTI_DEFINE_ERROR(LabelOutOfRange);

// training / folds
DTI_DEFINE_ERROR(StratificationImpossible);

// files
DTI_DEFINE_ERROR(CorruptFile);
DTI_DEFINE_ERROR(IoError);
DTI_DEFINE_ERROR(EmptyClass);
DTI_DEFINE_ERROR(MixedFrameSizes);
DTI_DEFINE_ERROR(UnknownTag);
DTI_DEFINE_ERROR(InvalidConfig);

// wire protocol
DTI_DEFINE_ERROR(BadMagic);
DTI_DEFINE_ERROR(UnknownType);
DTI_DEFINE_ERROR(LengthMismatch);
DTI_DEFINE_ERROR(TruncatedPayload);
DTI_DEFINE_ERROR(ConnectionLost);
DTI_DEFINE_ERROR(ProtocolError);

#undef DTI_DEFINE_ERROR

} // namespace dti
