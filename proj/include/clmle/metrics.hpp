#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "clmle/hypersphere.hpp"
#include "json.hpp"

namespace clmle {

/// Mean per-class recall over the classes present in `labels`. For two
/// classes this is 0.5 (tp/Np + tn/Nn).
Scalar balanced_accuracy(std::span<const int> predictions, std::span<const int> labels);

/// Mean per-class recall over an explicit class list; throws EmptyClass if a
/// listed class has no sample.
Scalar balanced_accuracy(std::span<const int> predictions, std::span<const int> labels,
                         std::span<const int> classes);

Scalar overall_accuracy(std::span<const int> predictions, std::span<const int> labels);

struct RocPoint {
  Scalar threshold;  // accept iff score >= threshold; +inf for the origin
  Scalar far;
  Scalar tar;
};

struct RocResult {
  std::vector<RocPoint> curve;  // from (0,0) to (1,1)
  std::vector<Scalar> far_targets;
  std::vector<Scalar> tar_at_far;
  std::vector<Scalar> threshold_at_far;
};

/// Threshold sweep over the unique scores. TAR at a target FAR is read at
/// the lowest threshold whose empirical FAR does not exceed the target.
RocResult roc_tar_far(std::span<const Scalar> scores, std::span<const bool> same,
                      std::span<const Scalar> far_targets);

/// Fraction of probes whose most similar gallery column (lowest index on
/// ties) carries the probe's label.
Scalar rank1_identification(const ConstMatrixRef& probes, std::span<const int> probe_labels,
                            const ConstMatrixRef& gallery, std::span<const int> gallery_labels);

/// |100 Np / (Np + Nn) - 50| for labels in {0, 1}; 1 is the positive class.
Scalar imbalance_level(std::span<const int> labels);

struct EvalReport {
  std::vector<int> classes;
  std::vector<Scalar> per_class_accuracy;
  Scalar balanced_accuracy = 0;
  Scalar overall_accuracy = 0;
  std::vector<std::size_t> class_counts;
  /// [true][predicted] in `classes` order, plus a final column for
  /// predictions outside `classes`; rows sum to class_counts.
  std::vector<std::vector<std::size_t>> confusion;
  std::optional<RocResult> roc;
  std::vector<Scalar> imbalance_levels;  // per one-vs-rest binary task
};

EvalReport evaluate(std::span<const int> predictions, std::span<const int> labels);

nlohmann::json to_json(const EvalReport& report);
/// Per-class CSV: class,count,correct,accuracy,imbalance_level.
void write_eval_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace clmle
