#include <cosp/error.hpp>

namespace cosp
{

std::string_view to_string(ErrorCode code)
{
    switch (code)
    {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::MissingInput: return "MissingInput";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::IncompleteRun: return "IncompleteRun";
    case ErrorCode::InsufficientMatches: return "InsufficientMatches";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::ThresholdNotFound: return "ThresholdNotFound";
    case ErrorCode::StripesNotFound: return "StripesNotFound";
    case ErrorCode::TraceGap: return "TraceGap";
    case ErrorCode::FootprintOutsideReference: return "FootprintOutsideReference";
    case ErrorCode::ResidualTooLarge: return "ResidualTooLarge";
    case ErrorCode::NodataUnderPoint: return "NodataUnderPoint";
    case ErrorCode::ProjectionFailure: return "ProjectionFailure";
    case ErrorCode::DisjointGrids: return "DisjointGrids";
    case ErrorCode::NoStableTerrain: return "NoStableTerrain";
    case ErrorCode::TileUnderconstrained: return "TileUnderconstrained";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::SingularNormalMatrix: return "SingularNormalMatrix";
    case ErrorCode::DivergingResiduals: return "DivergingResiduals";
    case ErrorCode::IllConditionedFit: return "IllConditionedFit";
    case ErrorCode::NearParallelRays: return "NearParallelRays";
    case ErrorCode::DivergentPoint: return "DivergentPoint";
    }
    return "Unknown";
}

int exit_status(ErrorCode code)
{
    switch (code)
    {
    case ErrorCode::InvalidArgument:
    case ErrorCode::ConfigInvalid:
        return 2;
    case ErrorCode::NoConvergence:
    case ErrorCode::BehindCamera:
    case ErrorCode::SingularNormalMatrix:
    case ErrorCode::DivergingResiduals:
    case ErrorCode::IllConditionedFit:
    case ErrorCode::NearParallelRays:
    case ErrorCode::DivergentPoint:
        return 4;
    default:
        return 3;
    }
}

} // namespace cosp
