#include "sparsetx/error.hpp"

namespace sparsetx {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::FileNotFound: return "FileNotFound";
        case ErrorKind::SchemaMismatch: return "SchemaMismatch";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::DuplicateCell: return "DuplicateCell";
        case ErrorKind::EmptyMatrix: return "EmptyMatrix";
        case ErrorKind::InsufficientData: return "InsufficientData";
        case ErrorKind::InvalidShare: return "InvalidShare";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::InfeasibleFraction: return "InfeasibleFraction";
        case ErrorKind::SvdFailure: return "SvdFailure";
        case ErrorKind::NoObservedCells: return "NoObservedCells";
        case ErrorKind::EmptyRow: return "EmptyRow";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::NonFiniteLikelihood: return "NonFiniteLikelihood";
        case ErrorKind::ElboDiverged: return "ElboDiverged";
        case ErrorKind::InsufficientDraws: return "InsufficientDraws";
        case ErrorKind::AllConstantDesign: return "AllConstantDesign";
        case ErrorKind::TooFewRows: return "TooFewRows";
        case ErrorKind::SingularCovariance: return "SingularCovariance";
        case ErrorKind::KTooLarge: return "KTooLarge";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::ConstantTruth: return "ConstantTruth";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::HttpError: return "HttpError";
        case ErrorKind::ApiShapeError: return "ApiShapeError";
        case ErrorKind::CacheMiss: return "CacheMiss";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::StageError: return "StageError";
    }
    return "Unknown";
}

}  // namespace sparsetx
