#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sparsetx {

/// Every failure the library reports carries one of these kinds so callers
/// (and the CLI) can react without string matching.
enum class ErrorKind {
    FileNotFound,
    SchemaMismatch,
    ParseError,
    DuplicateCell,
    EmptyMatrix,
    InsufficientData,
    InvalidShare,
    InvalidConfig,
    InfeasibleFraction,
    SvdFailure,
    NoObservedCells,
    EmptyRow,
    ShapeMismatch,
    NonFiniteLikelihood,
    ElboDiverged,
    InsufficientDraws,
    AllConstantDesign,
    TooFewRows,
    SingularCovariance,
    KTooLarge,
    LengthMismatch,
    ConstantTruth,
    IoError,
    HttpError,
    ApiShapeError,
    CacheMiss,
    ConfigError,
    StageError,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message, std::optional<long> detail = std::nullopt)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message),
          kind_(kind),
          detail_(detail) {}

    ErrorKind kind() const noexcept { return kind_; }

    /// Row index for ParseError, HTTP status for HttpError; empty otherwise.
    std::optional<long> detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    std::optional<long> detail_;
};

}  // namespace sparsetx
