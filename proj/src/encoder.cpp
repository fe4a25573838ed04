#include "clmle/encoder.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>

namespace clmle {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'L', 'M', 'L', 'E', 'E', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error(Errc::IoError, "truncated encoder checkpoint");
  return v;
}

void put_matrix(std::ofstream& os, const Matrix& m) {
  put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(m.size())));
}

Matrix get_matrix(std::ifstream& is) {
  const auto rows = get<std::uint64_t>(is);
  const auto cols = get<std::uint64_t>(is);
  if (rows > (1u << 24) || cols > (1u << 24)) throw Error(Errc::IoError, "implausible matrix shape");
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(m.size())));
  if (!is) throw Error(Errc::IoError, "truncated encoder checkpoint");
  return m;
}

void check_finite(const Matrix& m) {
  if (!m.allFinite()) throw Error(Errc::NonFiniteGradient, "gradient has non-finite entries");
}

}  // namespace

std::size_t EncoderParams::num_parameters() const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    n += static_cast<std::size_t>(weights[j].size() + biases[j].size());
  }
  return n;
}

bool EncoderParams::all_finite() const {
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (!weights[j].allFinite() || !biases[j].allFinite()) return false;
  }
  return true;
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    z.weights.push_back(Matrix::Zero(weights[j].rows(), weights[j].cols()));
    z.biases.push_back(Vector::Zero(biases[j].size()));
  }
  return z;
}

EncoderParams init_encoder(const EncoderShape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> normal(0.0, 1.0);
  EncoderParams p;
  Index fan_in = shape.input_dim;
  std::vector<Index> widths = shape.hidden;
  widths.push_back(shape.output_dim);
  for (Index width : widths) {
    const Scalar stddev = std::sqrt(2.0 / static_cast<Scalar>(fan_in));
    Matrix w(width, fan_in);
    // fill column-major so the stream order is fixed
    for (Index k = 0; k < w.size(); ++k) w.data()[k] = stddev * normal(rng);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(width));
    fan_in = width;
  }
  return p;
}

ForwardCache forward(const EncoderParams& params, const ConstMatrixRef& inputs) {
  if (params.weights.empty() || inputs.rows() != params.input_dim()) {
    throw Error(Errc::ShapeMismatch, "input dimension does not match the first layer");
  }
  ForwardCache cache;
  Matrix h = inputs;
  const std::size_t last = params.num_layers() - 1;
  for (std::size_t j = 0; j < params.num_layers(); ++j) {
    cache.inputs.push_back(h);
    Matrix z = params.weights[j] * h;
    z.colwise() += params.biases[j];
    if (j < last) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  cache.output_norms = h.colwise().norm().transpose();
  for (Index i = 0; i < h.cols(); ++i) {
    if (!(cache.output_norms[i] >= kZeroNormTol)) {
      throw Error(Errc::ZeroVector, "encoder output vanished for column " + std::to_string(i));
    }
  }
  cache.embeddings = h.array().rowwise() / cache.output_norms.transpose().array();
  cache.output_raw = std::move(h);
  return cache;
}

Matrix embed(const EncoderParams& params, const ConstMatrixRef& inputs) {
  return forward(params, inputs).embeddings;
}

EncoderParams backward(const EncoderParams& params, const ForwardCache& cache,
                       const ConstMatrixRef& embedding_grads) {
  const Matrix& f = cache.embeddings;
  if (embedding_grads.rows() != f.rows() || embedding_grads.cols() != f.cols() ||
      cache.inputs.size() != params.num_layers()) {
    throw Error(Errc::ShapeMismatch, "gradient does not match the forward cache");
  }
  // radial component removed, then scaled by 1/|z|
  const Vector radial = (f.array() * embedding_grads.array()).colwise().sum().transpose();
  Matrix delta = embedding_grads - f * radial.asDiagonal();
  delta = delta.array().rowwise() / cache.output_norms.transpose().array();

  EncoderParams grads = params.zeros_like();
  for (std::size_t j = params.num_layers(); j-- > 0;) {
    const Matrix& in = cache.inputs[j];
    grads.weights[j].noalias() = delta * in.transpose();
    grads.biases[j] = delta.rowwise().sum();
    if (j == 0) break;
    Matrix prev = params.weights[j].transpose() * delta;
    // rectifier mask: inputs to layer j are the post-activation outputs of j-1
    delta = (in.array() > 0).select(prev, 0.0);
  }
  return grads;
}

OptimizerState make_optimizer(const EncoderParams& params, Scalar learning_rate, Scalar momentum,
                              Scalar weight_decay) {
  if (!(learning_rate >= 0) || !(momentum >= 0 && momentum < 1) || !(weight_decay >= 0)) {
    throw Error(Errc::ConfigError, "need lr >= 0, momentum in [0,1), weight decay >= 0");
  }
  OptimizerState s;
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  s.velocity = params.zeros_like();
  return s;
}

void sgd_update(MatrixRef param, MatrixRef velocity, const ConstMatrixRef& grad,
                const OptimizerState& hyper) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols() ||
      velocity.rows() != grad.rows() || velocity.cols() != grad.cols()) {
    throw Error(Errc::ShapeMismatch, "parameter and gradient shapes differ");
  }
  if (!grad.allFinite()) throw Error(Errc::NonFiniteGradient, "gradient has non-finite entries");
  velocity = hyper.momentum * velocity + grad + hyper.weight_decay * param;
  param -= hyper.learning_rate * velocity;
}

void sgd_step(EncoderParams& params, OptimizerState& state, const EncoderParams& grads) {
  if (grads.num_layers() != params.num_layers() ||
      state.velocity.num_layers() != params.num_layers()) {
    throw Error(Errc::ShapeMismatch, "gradient layer count differs from parameters");
  }
  // validate everything first so a failed step leaves params untouched
  for (std::size_t j = 0; j < params.num_layers(); ++j) {
    check_finite(grads.weights[j]);
    check_finite(grads.biases[j]);
  }
  for (std::size_t j = 0; j < params.num_layers(); ++j) {
    sgd_update(params.weights[j], state.velocity.weights[j], grads.weights[j], state);
    sgd_update(params.biases[j], state.velocity.biases[j], grads.biases[j], state);
  }
}

void save_encoder(const std::filesystem::path& path, const EncoderParams& params,
                  const Matrix* head) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(Errc::IoError, "cannot open " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.num_layers()));
  for (std::size_t j = 0; j < params.num_layers(); ++j) {
    put_matrix(os, params.weights[j]);
    put_matrix(os, params.biases[j]);
  }
  put<std::uint8_t>(os, head ? 1 : 0);
  if (head) put_matrix(os, *head);
  if (!os) throw Error(Errc::IoError, "failed writing " + path.string());
}

EncoderParams load_encoder(const std::filesystem::path& path, Matrix* head) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::IoError, "cannot open " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw Error(Errc::IoError, "not an encoder checkpoint");
  if (get<std::uint32_t>(is) != kVersion) throw Error(Errc::IoError, "unsupported checkpoint version");
  const auto layers = get<std::uint32_t>(is);
  EncoderParams p;
  for (std::uint32_t j = 0; j < layers; ++j) {
    p.weights.push_back(get_matrix(is));
    p.biases.push_back(get_matrix(is));
    if (p.biases.back().cols() != 1 || p.biases.back().rows() != p.weights.back().rows()) {
      throw Error(Errc::IoError, "bias shape does not match weights");
    }
  }
  const bool has_head = get<std::uint8_t>(is) != 0;
  if (has_head) {
    Matrix h = get_matrix(is);
    if (head) *head = std::move(h);
  } else if (head) {
    head->resize(0, 0);
  }
  if (!p.all_finite()) throw Error(Errc::IoError, "checkpoint contains non-finite parameters");
  return p;
}

void write_embeddings_csv(const std::filesystem::path& path, const ConstMatrixRef& embeddings,
                          std::span<const Index> ids, std::span<const int> labels) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error(Errc::IoError, "cannot open " + path.string());
  std::fprintf(f, "id,label");
  for (Index k = 0; k < embeddings.rows(); ++k) std::fprintf(f, ",e%ld", static_cast<long>(k));
  std::fprintf(f, "\n");
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const Index id = ids[r];
    std::fprintf(f, "%ld,%d", static_cast<long>(id), labels[static_cast<std::size_t>(id)]);
    for (Index k = 0; k < embeddings.rows(); ++k) {
      std::fprintf(f, ",%.17g", embeddings(k, static_cast<Index>(r)));
    }
    std::fprintf(f, "\n");
  }
  if (std::fclose(f) != 0) throw Error(Errc::IoError, "failed writing " + path.string());
}

}  // namespace clmle
