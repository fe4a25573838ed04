#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "clmle/hypersphere.hpp"

namespace clmle {

/// Fully connected rectifier network whose output is L2-normalized.
/// Layer j maps weights[j].cols() inputs to weights[j].rows() outputs;
/// every layer but the last is followed by a rectifier.
struct EncoderParams {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  std::size_t num_layers() const noexcept { return weights.size(); }
  Index input_dim() const { return weights.front().cols(); }
  Index output_dim() const { return weights.back().rows(); }
  std::size_t num_parameters() const;
  bool all_finite() const;

  /// Zero-valued parameters with the same shapes.
  EncoderParams zeros_like() const;
};

struct EncoderShape {
  Index input_dim = 32;
  std::vector<Index> hidden = {64, 64};
  Index output_dim = 16;
};

/// Fan-in scaled normal initialization, biases zero.
EncoderParams init_encoder(const EncoderShape& shape, std::uint64_t seed);

struct ForwardCache {
  std::vector<Matrix> inputs;  // input to every layer
  Matrix output_raw;           // pre-normalization output z
  Vector output_norms;         // |z| per column
  Matrix embeddings;           // z / |z|
};

/// Embeds every column of `inputs`. Throws ZeroVector when some z vanishes.
ForwardCache forward(const EncoderParams& params, const ConstMatrixRef& inputs);

/// Embeddings only.
Matrix embed(const EncoderParams& params, const ConstMatrixRef& inputs);

/// Gradients of the parameters given dLoss/d(embedding) for every column.
/// The normalization layer contributes (I - f f^T) / |z|.
EncoderParams backward(const EncoderParams& params, const ForwardCache& cache,
                       const ConstMatrixRef& embedding_grads);

struct OptimizerState {
  Scalar learning_rate = 0.1;
  Scalar momentum = 0.9;
  Scalar weight_decay = 0.0005;
  EncoderParams velocity;
};

OptimizerState make_optimizer(const EncoderParams& params, Scalar learning_rate,
                              Scalar momentum = 0.9, Scalar weight_decay = 0.0005);

/// v <- m v + grad + lambda p;  p <- p - lr v. Throws NonFiniteGradient.
void sgd_step(EncoderParams& params, OptimizerState& state, const EncoderParams& grads);

/// The same update for a single parameter block (used for the softmax head).
void sgd_update(MatrixRef param, MatrixRef velocity, const ConstMatrixRef& grad,
                const OptimizerState& hyper);

/// Versioned little-endian binary: magic, version, layer count, then per
/// layer (rows, cols, weights column-major, bias). An optional extra matrix
/// (the softmax head) follows with its own shape header.
void save_encoder(const std::filesystem::path& path, const EncoderParams& params,
                  const Matrix* head = nullptr);
EncoderParams load_encoder(const std::filesystem::path& path, Matrix* head = nullptr);

/// CSV rows "id,label,e0,...,e{d-1}" for the given sample ids.
void write_embeddings_csv(const std::filesystem::path& path, const ConstMatrixRef& embeddings,
                          std::span<const Index> ids, std::span<const int> labels);

}  // namespace clmle
