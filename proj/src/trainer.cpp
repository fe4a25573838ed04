#include "clmle/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "clmle/classifier.hpp"
#include "clmle/metrics.hpp"
#include "clmle/sampler.hpp"

namespace clmle {

namespace {

std::vector<int> argmax_predict(const Matrix& head, const Matrix& embeddings) {
  const Matrix scores = head.transpose() * embeddings;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(scores.cols()));
  for (Index i = 0; i < scores.cols(); ++i) {
    Index best = 0;
    scores.col(i).maxCoeff(&best);  // first maximum on ties
    out.push_back(static_cast<int>(best));
  }
  return out;
}

Matrix init_head(Index dim, int num_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> normal(0.0, 1.0 / std::sqrt(static_cast<Scalar>(dim)));
  Matrix w(dim, num_classes);
  for (Index k = 0; k < w.size(); ++k) w.data()[k] = normal(rng);
  return w;
}

void check_loss(Scalar value, std::size_t iteration) {
  if (!std::isfinite(value)) {
    throw Error(Errc::DivergenceDetected, "non-finite loss at iteration " + std::to_string(iteration));
  }
}

void check_params(const EncoderParams& params, const Matrix* head, std::size_t iteration) {
  if (!params.all_finite() || (head && !head->allFinite())) {
    throw Error(Errc::DivergenceDetected, "parameters overflowed at iteration " + std::to_string(iteration));
  }
}

// Tracks validation accuracy and reports plateaus.
struct Plateau {
  Scalar best = -1;
  std::size_t stale = 0;

  bool update(Scalar value, Scalar tol, std::size_t patience) {
    if (value > best + tol) {
      best = value;
      stale = 0;
      return false;
    }
    if (++stale >= patience) {
      stale = 0;
      return true;
    }
    return false;
  }
};

struct Margins {
  Scalar a1;
  Scalar a2;
};

MarginBounds dataset_bounds(const Dataset& data) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(data.num_classes), 0);
  for (Index id : data.train) ++counts[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(id)])];
  std::size_t smallest = data.train.size();
  for (auto c : counts) {
    if (c > 0) smallest = std::min(smallest, c);
  }
  return margin_upper_bounds(static_cast<std::size_t>(data.num_classes), std::max<std::size_t>(1, smallest),
                             std::max<std::size_t>(1, data.train.size()));
}

std::vector<Margins> candidate_margins(const Dataset& data, const TrainConfig& config) {
  if (config.loss != LossKind::Clmle) return {{0, 0}};
  const MarginBounds bounds = dataset_bounds(data);
  if (config.a1 >= 0) {
    const Scalar a2 = config.a2 >= 0 ? config.a2 : std::min(config.a1, 0.25 * bounds.a2_max);
    if (!(a2 <= config.a1)) throw Error(Errc::ConfigError, "within-class margin a2 must not exceed a1");
    return {{config.a1, a2}};
  }
  std::vector<Margins> out;
  for (Scalar f : config.margin_fractions) {
    const Scalar a1 = f * bounds.a1_max;
    out.push_back({a1, std::min(a1, f * bounds.a2_max)});
  }
  return out;
}

std::vector<Triplet> draw_triplets(const MiniBatch& batch, std::mt19937_64& rng) {
  std::vector<Triplet> out;
  const auto b = static_cast<Index>(batch.size());
  std::vector<Index> same, other;
  for (Index a = 0; a < b; ++a) {
    same.clear();
    other.clear();
    for (Index j = 0; j < b; ++j) {
      if (j == a) continue;
      (batch.labels[static_cast<std::size_t>(j)] == batch.labels[static_cast<std::size_t>(a)] ? same : other)
          .push_back(j);
    }
    if (same.empty() || other.empty()) continue;
    const Index p = same[std::uniform_int_distribution<std::size_t>(0, same.size() - 1)(rng)];
    const Index n = other[std::uniform_int_distribution<std::size_t>(0, other.size() - 1)(rng)];
    out.push_back({a, p, n});
  }
  return out;
}

// Validation balanced accuracy of the k-nearest-cluster rule using the
// current partition with centroids recomputed on the current embeddings.
Scalar cluster_val_accuracy(const ClusterIndex& index, const Matrix& all_embeddings,
                            const Dataset& data, std::size_t* n_out = nullptr) {
  ClusterIndex current = index;
  recompute_centroids(current, all_embeddings);
  Matrix val(all_embeddings.rows(), static_cast<Index>(data.val.size()));
  for (std::size_t j = 0; j < data.val.size(); ++j) val.col(static_cast<Index>(j)) = all_embeddings.col(data.val[j]);
  Scalar score = 0;
  const std::size_t n = tune_n(current, val, data.gather_labels(data.val), &score);
  if (n_out) *n_out = n;
  return score;
}

}  // namespace

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::Clmle: return "clmle";
    case LossKind::Lmle: return "lmle";
    case LossKind::Triplet: return "triplet";
    case LossKind::Softmax: return "softmax";
  }
  return "unknown";
}

LossKind parse_loss_kind(const std::string& name) {
  for (auto k : {LossKind::Clmle, LossKind::Lmle, LossKind::Triplet, LossKind::Softmax}) {
    if (loss_kind_name(k) == name) return k;
  }
  throw Error(Errc::ConfigError, "unknown loss kind '" + name + "'");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(Errc::ConfigError, what);
  };
  require(cluster_size >= 1, "cluster_size must be >= 1");
  require(clusters_per_batch >= 2, "clusters_per_batch must be >= 2");
  require(samples_per_cluster >= 1, "samples_per_cluster must be >= 1");
  require(kmeans_iters >= 1, "kmeans_iters must be >= 1");
  require(loss_cache_decay > 0 && loss_cache_decay <= 1, "loss_cache_decay must be in (0, 1]");
  require(!margin_fractions.empty(), "margin_fractions must not be empty");
  for (Scalar f : margin_fractions) require(f >= 0 && f <= 1, "margin fractions must be in [0, 1]");
  require(lr_decay > 0 && lr_decay <= 1, "lr_decay must be in (0, 1]");
  require(a1 < 0 || a1 <= 2, "a1 must be <= 2");
  require(a2 < 0 || a1 < 0 || a2 <= a1, "need a2 <= a1");
  require(triplet_margin > 0, "triplet_margin must be > 0");
  require(lmle_margins.g1 > 0 && lmle_margins.g2 > 0 && lmle_margins.g3 > 0, "LMLE margins must be > 0");
  require(learning_rate > 0, "learning_rate must be > 0");
  require(momentum >= 0 && momentum < 1, "momentum must be in [0, 1)");
  require(weight_decay >= 0, "weight_decay must be >= 0");
  require(max_iterations >= 1, "max_iterations must be >= 1");
  require(refresh_period >= 1, "refresh_period must be >= 1");
  require(max_rounds >= 1, "max_rounds must be >= 1");
  require(eval_period >= 1, "eval_period must be >= 1");
  require(plateau_patience >= 1, "plateau_patience must be >= 1");
  require(pretrain_batch >= 1 && softmax_batch >= 1, "batch sizes must be >= 1");
  require(pretrain_lr >= 0, "pretrain_lr must be >= 0");
  require(shape.input_dim >= 1 && shape.output_dim >= 2, "encoder needs output_dim >= 2");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"loss", loss_kind_name(c.loss)},
          {"cluster_size", c.cluster_size},
          {"clusters_per_batch", c.clusters_per_batch},
          {"samples_per_cluster", c.samples_per_cluster},
          {"kmeans_iters", c.kmeans_iters},
          {"cost_sensitive", c.cost_sensitive},
          {"loss_cache_decay", c.loss_cache_decay},
          {"a1", c.a1},
          {"a2", c.a2},
          {"margin_fractions", c.margin_fractions},
          {"triplet_margin", c.triplet_margin},
          {"lmle_margins", {c.lmle_margins.g1, c.lmle_margins.g2, c.lmle_margins.g3}},
          {"hidden", c.shape.hidden},
          {"embedding_dim", c.shape.output_dim},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"lr_decay", c.lr_decay},
          {"weight_decay", c.weight_decay},
          {"max_iterations", c.max_iterations},
          {"refresh_period", c.refresh_period},
          {"max_rounds", c.max_rounds},
          {"eval_period", c.eval_period},
          {"plateau_patience", c.plateau_patience},
          {"plateau_tol", c.plateau_tol},
          {"pretrain_epochs", c.pretrain_epochs},
          {"pretrain_batch", c.pretrain_batch},
          {"pretrain_lr", c.pretrain_lr},
          {"softmax_batch", c.softmax_batch},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::ConfigError, "train config must be an object");
  TrainConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw Error(Errc::ConfigError, "unknown train key '" + key + "'");
  }
  try {
    if (j.contains("loss")) c.loss = parse_loss_kind(j.at("loss").get<std::string>());
    c.cluster_size = j.value("cluster_size", c.cluster_size);
    c.clusters_per_batch = j.value("clusters_per_batch", c.clusters_per_batch);
    c.samples_per_cluster = j.value("samples_per_cluster", c.samples_per_cluster);
    c.kmeans_iters = j.value("kmeans_iters", c.kmeans_iters);
    c.cost_sensitive = j.value("cost_sensitive", c.cost_sensitive);
    c.loss_cache_decay = j.value("loss_cache_decay", c.loss_cache_decay);
    c.a1 = j.value("a1", c.a1);
    c.a2 = j.value("a2", c.a2);
    c.margin_fractions = j.value("margin_fractions", c.margin_fractions);
    c.triplet_margin = j.value("triplet_margin", c.triplet_margin);
    if (j.contains("lmle_margins")) {
      const auto g = j.at("lmle_margins").get<std::vector<Scalar>>();
      if (g.size() != 3) throw Error(Errc::ConfigError, "lmle_margins needs three values");
      c.lmle_margins = {g[0], g[1], g[2]};
    }
    c.shape.hidden = j.value("hidden", c.shape.hidden);
    c.shape.output_dim = j.value("embedding_dim", c.shape.output_dim);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.refresh_period = j.value("refresh_period", c.refresh_period);
    c.max_rounds = j.value("max_rounds", c.max_rounds);
    c.eval_period = j.value("eval_period", c.eval_period);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.plateau_tol = j.value("plateau_tol", c.plateau_tol);
    c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
    c.pretrain_batch = j.value("pretrain_batch", c.pretrain_batch);
    c.pretrain_lr = j.value("pretrain_lr", c.pretrain_lr);
    c.softmax_batch = j.value("softmax_batch", c.softmax_batch);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, e.what());
  }
  c.validate();
  return c;
}

std::optional<std::size_t> TrainReport::seen_to_reach(Scalar target) const {
  for (const auto& e : evals) {
    if (e.val_balanced_accuracy >= target) return e.seen_samples;
  }
  return std::nullopt;
}

nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& e : r.evals) {
    evals.push_back({{"iteration", e.iteration},
                     {"seen_samples", e.seen_samples},
                     {"val_balanced_accuracy", e.val_balanced_accuracy},
                     {"learning_rate", e.learning_rate}});
  }
  return {{"iterations", r.losses.size()},
          {"final_loss", r.losses.empty() ? 0.0 : r.losses.back()},
          {"seen_samples", r.seen_samples.empty() ? 0 : r.seen_samples.back()},
          {"evals", evals},
          {"round_val_accuracy", r.round_val_accuracy},
          {"round_seconds", r.round_seconds},
          {"clustering_passes", r.clustering_passes},
          {"pretrain_seen_samples", r.pretrain_seen_samples},
          {"pretrain_val_accuracy", r.pretrain_val_accuracy},
          {"final_val_balanced_accuracy", r.final_val_balanced_accuracy},
          {"n_retrieve", r.n_retrieve},
          {"a1", r.a1},
          {"a2", r.a2},
          {"checkpoint", r.checkpoint}};
}

void write_report_csv(const std::filesystem::path& path, const TrainReport& report) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error(Errc::IoError, "cannot open " + path.string());
  std::fprintf(f, "iteration,loss,seen_samples\n");
  for (std::size_t i = 0; i < report.losses.size(); ++i) {
    std::fprintf(f, "%zu,%.17g,%zu\n", i + 1, report.losses[i], report.seen_samples[i]);
  }
  if (std::fclose(f) != 0) throw Error(Errc::IoError, "failed writing " + path.string());
}

std::vector<int> Model::predict(const ConstMatrixRef& inputs) const {
  const Matrix e = embed(encoder, inputs);
  if (kind == LossKind::Softmax) return argmax_predict(head, e);
  return predict_all(build_index(clusters, n_retrieve), e);
}

void save_model(const std::filesystem::path& dir, const Model& model) {
  save_encoder(dir / "encoder.bin", model.encoder, model.kind == LossKind::Softmax ? &model.head : nullptr);
  nlohmann::json j;
  j["format"] = "clmle-model";
  j["version"] = 1;
  j["loss"] = loss_kind_name(model.kind);
  j["n_retrieve"] = model.n_retrieve;
  j["clusters"] = to_json(model.clusters);
  std::ofstream os(dir / "model.json", std::ios::trunc);
  if (!os) throw Error(Errc::IoError, "cannot write " + (dir / "model.json").string());
  os << j.dump() << "\n";
}

Model load_model(const std::filesystem::path& dir) {
  Model m;
  std::ifstream is(dir / "model.json");
  if (!is) throw Error(Errc::IoError, "cannot open " + (dir / "model.json").string());
  nlohmann::json j;
  try {
    is >> j;
    if (j.at("format") != "clmle-model" || j.at("version") != 1) {
      throw Error(Errc::IoError, "unsupported model snapshot");
    }
    m.kind = parse_loss_kind(j.at("loss").get<std::string>());
    m.n_retrieve = j.at("n_retrieve").get<std::size_t>();
    m.clusters = cluster_index_from_json(j.at("clusters"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IoError, std::string("malformed model snapshot: ") + e.what());
  }
  m.encoder = load_encoder(dir / "encoder.bin", &m.head);
  return m;
}

PretrainResult pretrain_softmax(const Dataset& data, const EncoderParams& init, std::size_t epochs,
                                std::size_t batch_size, Scalar learning_rate,
                                const TrainConfig& config, std::uint64_t seed) {
  if (data.num_classes < 2) throw Error(Errc::ConfigError, "need at least 2 classes");
  PretrainResult r;
  r.encoder = init;
  r.head = init_head(init.output_dim(), data.num_classes, seed + 1);
  r.optimizer = make_optimizer(r.encoder, learning_rate, config.momentum, config.weight_decay);
  r.head_velocity = Matrix::Zero(r.head.rows(), r.head.cols());
  std::mt19937_64 rng(seed + 2);

  std::vector<Index> order = data.train;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::span<const Index> ids(order.data() + start, std::min(batch_size, order.size() - start));
      const auto cache = forward(r.encoder, data.gather(ids));
      const auto labels = data.gather_labels(ids);
      const auto out = softmax_ce_loss(cache.embeddings, labels, r.head);
      check_loss(out.value, step++);
      const auto grads = backward(r.encoder, cache, out.grads);
      try {
        sgd_step(r.encoder, r.optimizer, grads);
        sgd_update(r.head, r.head_velocity, out.weight_grads, r.optimizer);
      } catch (const Error& e) {
        throw Error(Errc::DivergenceDetected, std::string("pretraining: ") + e.what());
      }
      check_params(r.encoder, &r.head, step);
      r.seen_samples += ids.size();
    }
  }
  if (!data.val.empty()) {
    r.val_accuracy = balanced_accuracy(argmax_predict(r.head, embed(r.encoder, data.gather(data.val))),
                                       data.gather_labels(data.val));
  }
  return r;
}

namespace {

TrainResult run_training(const Dataset& data, const TrainConfig& config, const PretrainResult& pre,
                         const Margins& margins) {
  TrainResult result;
  TrainReport& report = result.report;
  Model& model = result.model;
  model.kind = config.loss;
  report.pretrain_seen_samples = pre.seen_samples;
  report.pretrain_val_accuracy = pre.val_accuracy;

  const Matrix val_inputs = data.gather(data.val);
  const auto val_labels = data.gather_labels(data.val);
  const std::size_t rounds = std::min(
      config.max_rounds, (config.max_iterations + config.refresh_period - 1) / config.refresh_period);
  std::mt19937_64 rng(config.seed + 3);
  Plateau plateau;
  std::size_t iteration = 0;
  std::size_t seen = 0;

  auto record = [&](Scalar loss, std::size_t batch) {
    check_loss(loss, iteration);
    ++iteration;
    seen += batch;
    report.losses.push_back(loss);
    report.seen_samples.push_back(seen);
  };
  auto round_length = [&](std::size_t r) {
    return std::min(config.refresh_period, config.max_iterations - r * config.refresh_period);
  };
  using clock = std::chrono::steady_clock;

  if (config.loss == LossKind::Softmax) {
    EncoderParams params = pre.encoder;
    Matrix head = pre.head;
    OptimizerState opt = make_optimizer(params, config.learning_rate, config.momentum, config.weight_decay);
    Matrix head_velocity = Matrix::Zero(head.rows(), head.cols());
    std::vector<Index> order = data.train;
    std::size_t cursor = order.size();
    {
      const Scalar acc = balanced_accuracy(argmax_predict(head, embed(params, val_inputs)), val_labels);
      report.evals.push_back({0, 0, acc, opt.learning_rate});
      plateau.update(acc, config.plateau_tol, config.plateau_patience);
    }
    for (std::size_t r = 0; r < rounds; ++r) {
      const auto t0 = clock::now();
      for (std::size_t it = 0; it < round_length(r); ++it) {
        std::vector<Index> ids;
        while (ids.size() < std::min(config.softmax_batch, order.size())) {
          if (cursor == order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
          }
          ids.push_back(order[cursor++]);
        }
        const auto cache = forward(params, data.gather(ids));
        const auto out = softmax_ce_loss(cache.embeddings, data.gather_labels(ids), head);
        check_loss(out.value, iteration);
        try {
          sgd_step(params, opt, backward(params, cache, out.grads));
          sgd_update(head, head_velocity, out.weight_grads, opt);
        } catch (const Error& e) {
          throw Error(Errc::DivergenceDetected, "iteration " + std::to_string(iteration) + ": " + e.what());
        }
        check_params(params, &head, iteration);
        record(out.value, ids.size());
        if (iteration % config.eval_period == 0) {
          const Scalar acc = balanced_accuracy(argmax_predict(head, embed(params, val_inputs)), val_labels);
          report.evals.push_back({iteration, seen, acc, opt.learning_rate});
          if (plateau.update(acc, config.plateau_tol, config.plateau_patience)) {
            opt.learning_rate *= config.lr_decay;
            break;
          }
        }
      }
      report.round_val_accuracy.push_back(
          balanced_accuracy(argmax_predict(head, embed(params, val_inputs)), val_labels));
      report.round_seconds.push_back(std::chrono::duration<Scalar>(clock::now() - t0).count());
    }
    model.encoder = std::move(params);
    model.head = std::move(head);
  } else {
    ClusterOptions copts;
    copts.cluster_size = config.cluster_size;
    copts.max_iters = config.kmeans_iters;
    copts.seed = config.seed + 4;

    EncoderParams params = pre.encoder;
    OptimizerState opt = make_optimizer(params, config.learning_rate, config.momentum, config.weight_decay);
    Matrix all_embeddings = embed(params, data.features);
    ClusterIndex index = build_cluster_index(all_embeddings, data.train, data.labels, copts);
    report.clustering_passes = 1;
    LossCache cache = make_loss_cache(index, static_cast<std::size_t>(data.size()), config.loss_cache_decay);
    ClassCursor cursor;
    std::vector<Index> anchors;
    {
      const Scalar acc = cluster_val_accuracy(index, all_embeddings, data);
      report.evals.push_back({0, 0, acc, opt.learning_rate});
      plateau.update(acc, config.plateau_tol, config.plateau_patience);
    }

    for (std::size_t r = 0; r < rounds; ++r) {
      const auto t0 = clock::now();
      for (std::size_t it = 0; it < round_length(r); ++it) {
        const int query = select_query_cluster(index, cache, cursor);
        std::vector<int> ids{query};
        const std::size_t want = std::min(config.clusters_per_batch, index.size()) - 1;
        if (want > 0) {
          const auto near = retrieve_nearest_clusters(index, query, want);
          ids.insert(ids.end(), near.begin(), near.end());
        }
        const MiniBatch batch = subsample_and_weight(index, ids, config.samples_per_cluster, rng);
        const auto fwd = forward(params, data.gather(batch.sample_ids));
        const BatchStructure structure = batch.local_structure();
        const std::span<const Scalar> weights =
            config.cost_sensitive ? std::span<const Scalar>(batch.weights) : std::span<const Scalar>();

        LossOutput out;
        bool have_loss = true;
        switch (config.loss) {
          case LossKind::Clmle: {
            ClmleConfig cfg{margins.a1, margins.a2, {}};
            if (config.cost_sensitive) cfg.cost_weights = batch.weights;
            try {
              out = clmle_loss(fwd.embeddings, structure, cfg);
            } catch (const Error& e) {
              if (e.code() != Errc::DegenerateCentroid && e.code() != Errc::SingleClusterBatch) throw;
              have_loss = false;
            }
            break;
          }
          case LossKind::Lmle: {
            anchors.resize(batch.size());
            std::iota(anchors.begin(), anchors.end(), Index{0});
            const auto quints = sample_quintuplets(structure, fwd.embeddings, anchors);
            if (quints.empty()) {
              have_loss = false;
            } else {
              out = lmle_loss(fwd.embeddings, quints, config.lmle_margins, structure, weights);
            }
            break;
          }
          case LossKind::Triplet: {
            const auto triplets = draw_triplets(batch, rng);
            if (triplets.empty()) {
              have_loss = false;
            } else {
              out = triplet_loss(fwd.embeddings, triplets, config.triplet_margin, weights);
            }
            break;
          }
          case LossKind::Softmax: break;
        }
        if (!have_loss) {
          out.value = 0;
          out.per_sample = Vector::Zero(static_cast<Index>(batch.size()));
        } else {
          try {
            sgd_step(params, opt, backward(params, fwd, out.grads));
          } catch (const Error& e) {
            if (e.code() != Errc::NonFiniteGradient) throw;
            throw Error(Errc::DivergenceDetected, "iteration " + std::to_string(iteration) + ": " + e.what());
          }
          check_params(params, nullptr, iteration);
        }
        update_loss_cache(cache, out.per_sample, batch);
        record(out.value, batch.size());

        if (iteration % config.eval_period == 0) {
          const Scalar acc = cluster_val_accuracy(index, embed(params, data.features), data);
          report.evals.push_back({iteration, seen, acc, opt.learning_rate});
          if (plateau.update(acc, config.plateau_tol, config.plateau_patience)) {
            opt.learning_rate *= config.lr_decay;
            break;
          }
        }
      }
      all_embeddings = embed(params, data.features);
      index = refresh_all(all_embeddings, index, data.labels, cache.sample_loss, copts);
      ++report.clustering_passes;
      std::vector<Scalar> history = std::move(cache.sample_loss);
      cache = make_loss_cache(index, static_cast<std::size_t>(data.size()), config.loss_cache_decay);
      cache.sample_loss = std::move(history);
      report.round_val_accuracy.push_back(cluster_val_accuracy(index, all_embeddings, data));
      report.round_seconds.push_back(std::chrono::duration<Scalar>(clock::now() - t0).count());
    }

    model.encoder = std::move(params);
    model.clusters = std::move(index);
    Matrix val_embeddings = embed(model.encoder, val_inputs);
    model.n_retrieve = tune_n(model.clusters, val_embeddings, val_labels);
  }

  report.n_retrieve = model.n_retrieve;
  report.a1 = margins.a1;
  report.a2 = margins.a2;
  report.final_val_balanced_accuracy = balanced_accuracy(model.predict(val_inputs), val_labels);
  return result;
}

}  // namespace

TrainResult train(const Dataset& data, const TrainConfig& config) {
  config.validate();
  if (data.num_classes < 2) throw Error(Errc::ConfigError, "dataset needs at least 2 classes");
  if (data.train.empty() || data.val.empty()) throw Error(Errc::ConfigError, "empty train or validation split");

  EncoderShape shape = config.shape;
  shape.input_dim = data.features.rows();
  try {
    const PretrainResult pre = pretrain_softmax(data, init_encoder(shape, config.seed), config.pretrain_epochs,
                                                config.pretrain_batch, config.pretrain_lr, config, config.seed);
    std::optional<TrainResult> best;
    for (const Margins& m : candidate_margins(data, config)) {
      TrainResult r = run_training(data, config, pre, m);
      if (!best || r.report.final_val_balanced_accuracy > best->report.final_val_balanced_accuracy) {
        best = std::move(r);
      }
    }
    return std::move(*best);
  } catch (const Error& e) {
    // a vanishing encoder output only happens once the weights have degenerated
    if (e.code() == Errc::ZeroVector) throw Error(Errc::DivergenceDetected, e.what());
    throw;
  }
}

}  // namespace clmle
