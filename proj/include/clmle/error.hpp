#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace clmle {

enum class Errc {
  ZeroVector,
  DimensionMismatch,
  InvalidCounts,
  EmptyInput,
  DegenerateCentroid,
  EmptyTripletSet,
  EmptyQuintupletSet,
  RoleViolation,
  InsufficientStructure,
  SingleClusterBatch,
  NonPositiveWeight,
  LabelOutOfRange,
  ShapeMismatch,
  NonFiniteGradient,
  EmptyIndex,
  TooFewClusters,
  EmptyRetrieval,
  DivergenceDetected,
  ConfigError,
  SpecError,
  EmptyClass,
  DegeneratePairs,
  NotBinary,
  IoError,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace clmle
