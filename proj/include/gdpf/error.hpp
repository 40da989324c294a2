// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gdpf {

enum class ErrorCode {
    MissingSection,
    MalformedRow,
    DanglingReference,
    MultipleSlack,
    NoSlack,
    InvalidGrid,
    IndexOutOfRange,
    ZeroImpedanceBranch,
    DisconnectedGrid,
    SingularJacobian,
    SingularMatrix,
    NotConverged,
    NotEnoughPairs,
    AllGensOut,
    TooFewRecords,
    TooFewRows,
    ShapeMismatch,
    WrongTopologyForOneModel,
    UnsupportedTopology,
    EmptySplit,
    InvalidConfig,
    IoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::MissingSection: return "MissingSection";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::DanglingReference: return "DanglingReference";
    case ErrorCode::MultipleSlack: return "MultipleSlack";
    case ErrorCode::NoSlack: return "NoSlack";
    case ErrorCode::InvalidGrid: return "InvalidGrid";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::ZeroImpedanceBranch: return "ZeroImpedanceBranch";
    case ErrorCode::DisconnectedGrid: return "DisconnectedGrid";
    case ErrorCode::SingularJacobian: return "SingularJacobian";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::NotEnoughPairs: return "NotEnoughPairs";
    case ErrorCode::AllGensOut: return "AllGensOut";
    case ErrorCode::TooFewRecords: return "TooFewRecords";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::WrongTopologyForOneModel: return "WrongTopologyForOneModel";
    case ErrorCode::UnsupportedTopology: return "UnsupportedTopology";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

}  // namespace gdpf
