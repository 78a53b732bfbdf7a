#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cosp
{

enum class ErrorCode
{
    InvalidArgument,
    ConfigInvalid,
    MissingInput,
    IoError,
    IncompleteRun,
    // data errors
    InsufficientMatches,
    DegenerateGeometry,
    ThresholdNotFound,
    StripesNotFound,
    TraceGap,
    FootprintOutsideReference,
    ResidualTooLarge,
    NodataUnderPoint,
    ProjectionFailure,
    DisjointGrids,
    NoStableTerrain,
    TileUnderconstrained,
    // numerical failures
    NoConvergence,
    BehindCamera,
    SingularNormalMatrix,
    DivergingResiduals,
    IllConditionedFit,
    NearParallelRays,
    DivergentPoint,
};

std::string_view to_string(ErrorCode code);

/// Process exit status for the command line tool: 2 config, 3 data, 4 numerical.
int exit_status(ErrorCode code);

class Error : public std::runtime_error
{
public:
    Error(ErrorCode code, const std::string &message) : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace cosp
