#pragma once

#include <stdexcept>
#include <string>

namespace gdsm {

// Base class for every error raised by the library. Subtypes match the
// failure modes of the pipeline contracts so callers can catch precisely.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define GDSM_DEFINE_ERROR(Name)                                   \
    class Name : public Error {                                   \
    public:                                                       \
        explicit Name(const std::string& msg) : Error(msg) {}     \
    }

// volume / manifest
GDSM_DEFINE_ERROR(FileMissing);
GDSM_DEFINE_ERROR(FormatError);
GDSM_DEFINE_ERROR(DimsMismatch);
GDSM_DEFINE_ERROR(NonFiniteInput);
GDSM_DEFINE_ERROR(EmptyManifest);
GDSM_DEFINE_ERROR(IoError);

// extraction
GDSM_DEFINE_ERROR(IntervalOutOfBounds);
GDSM_DEFINE_ERROR(EmptyMaskOnSlice);

// phantom
GDSM_DEFINE_ERROR(InvalidParams);

// model
GDSM_DEFINE_ERROR(ShapeMismatch);
GDSM_DEFINE_ERROR(NonFiniteOutput);
GDSM_DEFINE_ERROR(EmptyDataset);
GDSM_DEFINE_ERROR(DivergedLoss);
GDSM_DEFINE_ERROR(UntrainedSource);

// selection / correction
GDSM_DEFINE_ERROR(MissingPatches);
GDSM_DEFINE_ERROR(NonFinitePrediction);
GDSM_DEFINE_ERROR(TooFewRows);
GDSM_DEFINE_ERROR(NoDefinedColumns);
GDSM_DEFINE_ERROR(SelectionLeakage);

// aggregation / metrics
GDSM_DEFINE_ERROR(UnfittedAggregator);
GDSM_DEFINE_ERROR(LengthMismatch);
GDSM_DEFINE_ERROR(EmptyInput);
GDSM_DEFINE_ERROR(ConstantTargets);
GDSM_DEFINE_ERROR(ConstantVector);

// pipeline / CLI
GDSM_DEFINE_ERROR(StageOrderViolation);
GDSM_DEFINE_ERROR(ConfigHashMismatch);

#undef GDSM_DEFINE_ERROR

}  // namespace gdsm
