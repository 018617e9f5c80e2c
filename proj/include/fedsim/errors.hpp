#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

// Base of all library errors. `category()` is the stable machine-readable
// name the CLI reports; the message carries context.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(category + ": " + message), category_(std::move(category)) {}

    const std::string& category() const { return category_; }

private:
    std::string category_;
};

#define FEDSIM_DEFINE_ERROR(NAME)                                              \
    class NAME : public Error {                                                \
    public:                                                                    \
        explicit NAME(const std::string& message) : Error(#NAME, message) {}   \
    }

FEDSIM_DEFINE_ERROR(ShapeMismatch);
FEDSIM_DEFINE_ERROR(InvalidAxis);
FEDSIM_DEFINE_ERROR(NonFiniteValue);
FEDSIM_DEFINE_ERROR(NonIntegralOutputSize);
FEDSIM_DEFINE_ERROR(DegenerateBatch);
FEDSIM_DEFINE_ERROR(InvalidGroupCount);
FEDSIM_DEFINE_ERROR(InvalidRate);
FEDSIM_DEFINE_ERROR(LabelOutOfRange);
FEDSIM_DEFINE_ERROR(InvalidSpec);
FEDSIM_DEFINE_ERROR(StaleCache);
FEDSIM_DEFINE_ERROR(MissingAnchor);
FEDSIM_DEFINE_ERROR(InvalidFraction);
FEDSIM_DEFINE_ERROR(VariantMismatch);
FEDSIM_DEFINE_ERROR(EmptyShard);
FEDSIM_DEFINE_ERROR(EmptyUpdateSet);
FEDSIM_DEFINE_ERROR(InvalidCounts);
FEDSIM_DEFINE_ERROR(IndivisibleSplit);
FEDSIM_DEFINE_ERROR(InvalidAlpha);
FEDSIM_DEFINE_ERROR(RetriesExhausted);
FEDSIM_DEFINE_ERROR(ParseError);
FEDSIM_DEFINE_ERROR(ConstraintViolation);
FEDSIM_DEFINE_ERROR(FingerprintMismatch);
FEDSIM_DEFINE_ERROR(IoError);

#undef FEDSIM_DEFINE_ERROR

}  // namespace fedsim
