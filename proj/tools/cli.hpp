#pragma once

#include <ostream>

#include "json.hpp"

namespace clmle::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kIoError = 3,
  kDivergence = 4,
};

/// Runs one command. Usage:
///   clmle <gen-data|train|eval|compare|export-embeddings|tune-n|schema>
///         [--config path] [--out dir] [--seed n] [--force]
/// Errors go to `err` as {"error": <kind>, "message": <text>}.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// The published JSON schema for run configs.
const char* run_config_schema();

/// Checks `value` against the subset of JSON Schema used by the run config
/// schema (type, enum, properties, additionalProperties, items, minItems,
/// maxItems, minimum, maximum, exclusiveMinimum, exclusiveMaximum). Throws
/// ConfigError naming the offending path.
void validate_against_schema(const nlohmann::json& schema, const nlohmann::json& value);

}  // namespace clmle::cli
