#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "clmle/hypersphere.hpp"
#include "json.hpp"

namespace clmle {

/// Power-law imbalanced Gaussian-mixture benchmark. Class c in [1, C]
/// receives round(l_max / (c^gamma + l_min)) samples (at least one).
struct SyntheticSpec {
  int num_classes = 10;
  Scalar gamma = 0.5;
  Scalar l_max = 500;
  Scalar l_min = 5;
  int modes_per_class = 3;
  Index input_dim = 32;
  Scalar noise = 0.2;
  /// Minimum pairwise angle between mode means, in degrees.
  Scalar min_mode_angle_deg = 30;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

struct Dataset {
  Matrix features;          // input_dim x n, one column per sample id
  std::vector<int> labels;  // 0-based class per sample id
  std::vector<Index> train, val, test;
  int num_classes = 0;

  Index size() const noexcept { return features.cols(); }
  Matrix gather(std::span<const Index> ids) const;
  std::vector<int> gather_labels(std::span<const Index> ids) const;
};

std::vector<std::size_t> power_law_sizes(const SyntheticSpec& spec);

/// Samples every class from `modes_per_class` Gaussian modes around random
/// unit means (pairwise angle enforced by rejection) and splits each class
/// 70/10/20 into train/val/test.
Dataset gen_power_law(const SyntheticSpec& spec);

/// Stratified split with the given fractions, shuffled by `seed`.
void stratified_split(Dataset& data, Scalar train_frac, Scalar val_frac, std::uint64_t seed);

/// Dataset CSV ("id,label,x0,...") plus a JSON sidecar holding the split
/// ids and, when known, the generating spec.
void save_dataset(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                  const Dataset& data, const SyntheticSpec* spec = nullptr);
Dataset load_dataset(const std::filesystem::path& csv_path, const std::filesystem::path& json_path);

}  // namespace clmle
