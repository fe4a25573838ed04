#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "clmle/clustering.hpp"
#include "clmle/datagen.hpp"
#include "clmle/encoder.hpp"
#include "clmle/losses.hpp"
#include "json.hpp"

namespace clmle {

enum class LossKind { Clmle, Lmle, Triplet, Softmax };

std::string loss_kind_name(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct TrainConfig {
  LossKind loss = LossKind::Clmle;

  // clusters and batches
  std::size_t cluster_size = 20;       // l
  std::size_t clusters_per_batch = 12; // M
  std::size_t samples_per_cluster = 2;  // n_sub, l/10
  int kmeans_iters = 50;
  bool cost_sensitive = true;
  Scalar loss_cache_decay = 0.5;

  // margins; a1 < 0 selects a1 = f * a1_max, a2 = min(a1, f * a2_max) with
  // f picked from margin_fractions by validation balanced accuracy
  Scalar a1 = -1;
  Scalar a2 = -1;
  std::vector<Scalar> margin_fractions{0.1, 0.25, 0.5};
  Scalar triplet_margin = 0.2;
  LmleMargins lmle_margins;

  // optimization
  EncoderShape shape;
  Scalar learning_rate = 0.1;
  Scalar momentum = 0.9;
  Scalar weight_decay = 0.0005;
  Scalar lr_decay = 0.1;  // applied when a round ends on a plateau
  std::size_t max_iterations = 10000;
  std::size_t refresh_period = 2000;
  std::size_t max_rounds = 5;
  std::size_t eval_period = 50;
  std::size_t plateau_patience = 3;
  Scalar plateau_tol = 1e-3;

  // softmax pretraining (prior features for the first clustering) and the
  // softmax baseline
  std::size_t pretrain_epochs = 5;
  std::size_t pretrain_batch = 64;
  Scalar pretrain_lr = 0.1;
  std::size_t softmax_batch = 120;

  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EvalPoint {
  std::size_t iteration = 0;
  std::size_t seen_samples = 0;
  Scalar val_balanced_accuracy = 0;
  Scalar learning_rate = 0;
};

struct TrainReport {
  std::vector<Scalar> losses;             // per iteration
  std::vector<std::size_t> seen_samples;  // cumulative, per iteration
  std::vector<EvalPoint> evals;
  std::vector<Scalar> round_val_accuracy;
  std::vector<Scalar> round_seconds;
  std::size_t clustering_passes = 0;
  std::size_t pretrain_seen_samples = 0;
  Scalar pretrain_val_accuracy = 0;
  Scalar final_val_balanced_accuracy = 0;
  std::size_t n_retrieve = 0;
  Scalar a1 = 0;
  Scalar a2 = 0;
  std::string checkpoint;

  /// Seen samples at the first evaluation reaching `target`, or nullopt.
  std::optional<std::size_t> seen_to_reach(Scalar target) const;
};

nlohmann::json to_json(const TrainReport& report);
/// CSV "iteration,loss,seen_samples".
void write_report_csv(const std::filesystem::path& path, const TrainReport& report);

/// A trained embedding plus what is needed to classify with it: the cluster
/// index and N for the metric losses, the linear head for softmax.
struct Model {
  LossKind kind = LossKind::Clmle;
  EncoderParams encoder;
  Matrix head;  // d x C, softmax only
  ClusterIndex clusters;
  std::size_t n_retrieve = 0;

  std::vector<int> predict(const ConstMatrixRef& inputs) const;
};

/// Writes <dir>/encoder.bin and <dir>/model.json.
void save_model(const std::filesystem::path& dir, const Model& model);
Model load_model(const std::filesystem::path& dir);

struct TrainResult {
  Model model;
  TrainReport report;
};

struct PretrainResult {
  EncoderParams encoder;
  Matrix head;
  OptimizerState optimizer;
  Matrix head_velocity;
  std::size_t seen_samples = 0;
  Scalar val_accuracy = 0;
};

/// Cross-entropy training of encoder + linear head for `epochs` passes over
/// the training split, starting from `init`.
PretrainResult pretrain_softmax(const Dataset& data, const EncoderParams& init, std::size_t epochs,
                                std::size_t batch_size, Scalar learning_rate,
                                const TrainConfig& config, std::uint64_t seed);

/// Softmax-pretrained warm start, then alternating cluster refreshes and
/// batches of the configured loss. Deterministic for a fixed config. With
/// derived CLMLE margins every fraction in margin_fractions is trained and
/// the best run on validation is returned.
TrainResult train(const Dataset& data, const TrainConfig& config);

}  // namespace clmle
