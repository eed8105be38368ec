#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lmprobe {

enum class ErrorKind {
    MalformedManifest,
    InvalidRecord,
    WrongCornerCount,
    NonFiniteCorner,
    TooFewRecords,
    InvalidSplit,
    BadMagic,
    UnsupportedVersion,
    UnsupportedDtype,
    UnsupportedOrder,
    UnsupportedShape,
    TruncatedFile,
    IoFailure,
    NonFiniteValue,
    MalformedIndex,
    RowCountMismatch,
    RaggedHiddenSize,
    MissingLayer,
    SingularSystem,
    NonFiniteInput,
    DimensionMismatch,
    TooFewSamples,
    InvalidConfig,
    DivergedTraining,
    InvalidBox,
    EmptyInput,
    MalformedReport,
};

constexpr std::string_view kind_name(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::MalformedManifest: return "MalformedManifest";
    case ErrorKind::InvalidRecord: return "InvalidRecord";
    case ErrorKind::WrongCornerCount: return "WrongCornerCount";
    case ErrorKind::NonFiniteCorner: return "NonFiniteCorner";
    case ErrorKind::TooFewRecords: return "TooFewRecords";
    case ErrorKind::InvalidSplit: return "InvalidSplit";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorKind::UnsupportedOrder: return "UnsupportedOrder";
    case ErrorKind::UnsupportedShape: return "UnsupportedShape";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::MalformedIndex: return "MalformedIndex";
    case ErrorKind::RowCountMismatch: return "RowCountMismatch";
    case ErrorKind::RaggedHiddenSize: return "RaggedHiddenSize";
    case ErrorKind::MissingLayer: return "MissingLayer";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::DivergedTraining: return "DivergedTraining";
    case ErrorKind::InvalidBox: return "InvalidBox";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::MalformedReport: return "MalformedReport";
    }
    return "Unknown";
}

/// Every failure raised by the toolkit. `kind()` is the stable, user-facing
/// category; `what()` carries the detail (record name, file path, shape).
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& detail)
        : std::runtime_error(std::string(kind_name(kind)) + ": " + detail), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace lmprobe
