#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace orthomed {

enum class ErrorCode {
    InvalidArgument,
    DegenerateColumn,
    UnboundedObjective,
    InstrumentDegenerate,
    UnionTooLarge,
    RankDeficient,
    Parse,
};

inline std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DegenerateColumn: return "DegenerateColumn";
    case ErrorCode::UnboundedObjective: return "UnboundedObjective";
    case ErrorCode::InstrumentDegenerate: return "InstrumentDegenerate";
    case ErrorCode::UnionTooLarge: return "UnionTooLarge";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::Parse: return "Parse";
    }
    return "Unknown";
}

/// Exception carrying a machine-readable code. Conditions that the
/// estimators report as flags (iteration limits, empty score regions,
/// degenerate density estimates) never throw.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline void require(bool cond, const std::string& what)
{
    if (!cond) {
        throw Error(ErrorCode::InvalidArgument, what);
    }
}

} // namespace orthomed
