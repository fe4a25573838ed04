#include "clmle/error.hpp"

namespace clmle {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InvalidCounts: return "InvalidCounts";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::DegenerateCentroid: return "DegenerateCentroid";
    case Errc::EmptyTripletSet: return "EmptyTripletSet";
    case Errc::EmptyQuintupletSet: return "EmptyQuintupletSet";
    case Errc::RoleViolation: return "RoleViolation";
    case Errc::InsufficientStructure: return "InsufficientStructure";
    case Errc::SingleClusterBatch: return "SingleClusterBatch";
    case Errc::NonPositiveWeight: return "NonPositiveWeight";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::EmptyIndex: return "EmptyIndex";
    case Errc::TooFewClusters: return "TooFewClusters";
    case Errc::EmptyRetrieval: return "EmptyRetrieval";
    case Errc::DivergenceDetected: return "DivergenceDetected";
    case Errc::ConfigError: return "ConfigError";
    case Errc::SpecError: return "SpecError";
    case Errc::EmptyClass: return "EmptyClass";
    case Errc::DegeneratePairs: return "DegeneratePairs";
    case Errc::NotBinary: return "NotBinary";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace clmle
