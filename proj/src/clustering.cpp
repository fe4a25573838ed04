#include "clmle/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <tuple>

namespace clmle {

namespace {

constexpr int kSnapshotVersion = 1;

Matrix kmeanspp_seeds(const ConstMatrixRef& features, std::size_t k, std::uint64_t seed) {
  const Index n = features.cols();
  std::mt19937_64 rng(seed);
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  Matrix seeds(features.rows(), static_cast<Index>(k));

  Index first = std::uniform_int_distribution<Index>(0, n - 1)(rng);
  chosen[first] = true;
  seeds.col(0) = features.col(first);
  // cosine distance to the closest chosen seed
  Vector dist = (Vector::Ones(n) - features.transpose() * features.col(first)).cwiseMax(0.0);

  for (std::size_t c = 1; c < k; ++c) {
    Scalar total = 0;
    for (Index i = 0; i < n; ++i) {
      if (!chosen[i]) total += dist[i];
    }
    Index pick = -1;
    if (total > 0) {
      Scalar u = std::uniform_real_distribution<Scalar>(0, total)(rng);
      for (Index i = 0; i < n; ++i) {
        if (chosen[i] || dist[i] <= 0) continue;
        pick = i;
        u -= dist[i];
        if (u < 0) break;
      }
    } else {
      const Index remaining = n - static_cast<Index>(c);
      Index r = std::uniform_int_distribution<Index>(0, remaining - 1)(rng);
      for (Index i = 0; i < n; ++i) {
        if (chosen[i]) continue;
        if (r-- == 0) {
          pick = i;
          break;
        }
      }
    }
    chosen[pick] = true;
    seeds.col(static_cast<Index>(c)) = features.col(pick);
    dist = dist.cwiseMin((Vector::Ones(n) - features.transpose() * features.col(pick)).cwiseMax(0.0));
  }
  return seeds;
}

// Greedy capacity-constrained assignment; returns the cluster of every sample.
std::vector<int> balanced_assign(const ConstMatrixRef& features, const Matrix& centroids,
                                 std::size_t l) {
  const Index n = features.cols();
  const Index k = centroids.cols();
  const Matrix sims = centroids.transpose() * features;  // K x n

  std::vector<std::tuple<Scalar, Index, Index>> pairs;
  pairs.reserve(static_cast<std::size_t>(n * k));
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < k; ++c) pairs.emplace_back(sims(c, i), i, c);
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  const std::size_t full = std::min<std::size_t>(static_cast<std::size_t>(k) * l, n);
  std::size_t placed = 0;
  for (const auto& [s, i, c] : pairs) {
    if (placed == full) break;
    if (assign[i] >= 0 || counts[c] >= l) continue;
    assign[i] = static_cast<int>(c);
    ++counts[c];
    ++placed;
  }

  const std::size_t r = static_cast<std::size_t>(n) - placed;
  if (r > 0) {
    const std::size_t extra = (r + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k);
    for (const auto& [s, i, c] : pairs) {
      if (assign[i] >= 0 || counts[c] >= l + extra) continue;
      assign[i] = static_cast<int>(c);
      ++counts[c];
    }
  }
  return assign;
}

std::vector<std::vector<Index>> group(const std::vector<int>& assign, std::size_t k) {
  std::vector<std::vector<Index>> members(k);
  for (std::size_t i = 0; i < assign.size(); ++i) members[assign[i]].push_back(static_cast<Index>(i));
  return members;
}

Vector member_sum(const ConstMatrixRef& features, const std::vector<Index>& members) {
  Vector s = Vector::Zero(features.rows());
  for (Index i : members) s += features.col(i);
  return s;
}

// Normalized means; clusters whose mean vanishes keep `previous`.
Matrix update_centroids(const ConstMatrixRef& features,
                        const std::vector<std::vector<Index>>& members, const Matrix& previous) {
  Matrix next = previous;
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (members[c].empty()) continue;
    const Vector s = member_sum(features, members[c]);
    const Scalar n = s.norm() / static_cast<Scalar>(members[c].size());
    if (n >= kZeroNormTol) next.col(static_cast<Index>(c)) = s.normalized();
  }
  return next;
}

}  // namespace

std::size_t cluster_count(std::size_t class_size, std::size_t cluster_size) {
  return std::max<std::size_t>(1, class_size / cluster_size);
}

UnitVector recompute_centroid(const ConstMatrixRef& member_features) {
  if (member_features.cols() == 0) {
    throw Error(Errc::EmptyInput, "centroid of an empty cluster");
  }
  const Vector mean = member_features.rowwise().mean();
  if (!(mean.norm() >= kZeroNormTol)) {
    throw Error(Errc::DegenerateCentroid, "members cancel out");
  }
  return normalize(mean);
}

Scalar clustering_objective(const ConstMatrixRef& features,
                            std::span<const std::vector<Index>> members,
                            const ConstMatrixRef& centroids) {
  Scalar total = 0;
  for (std::size_t c = 0; c < members.size(); ++c) {
    for (Index i : members[c]) total += features.col(i).dot(centroids.col(static_cast<Index>(c)));
  }
  return total;
}

ClassClusters cluster_class(const ConstMatrixRef& features, const ClusterOptions& opts) {
  if (features.cols() == 0) throw Error(Errc::EmptyInput, "no features to cluster");
  if (opts.cluster_size < 1 || opts.max_iters < 1) {
    throw Error(Errc::InvalidCounts, "cluster_size and max_iters must be >= 1");
  }
  const std::size_t n = static_cast<std::size_t>(features.cols());
  const std::size_t k = cluster_count(n, opts.cluster_size);
  // With K = 1 the class is a single cluster; capacity becomes the class size.
  const std::size_t cap = k == 1 ? n : opts.cluster_size;

  Matrix centroids = kmeanspp_seeds(features, k, opts.seed);
  std::vector<int> assign = balanced_assign(features, centroids, cap);
  auto members = group(assign, k);
  centroids = update_centroids(features, members, centroids);

  ClassClusters out;
  Scalar objective = clustering_objective(features, members, centroids);
  out.objective_trace.push_back(objective);
  out.iterations = 1;

  for (int it = 1; it < opts.max_iters; ++it) {
    std::vector<int> next = balanced_assign(features, centroids, cap);
    if (next == assign) break;
    auto next_members = group(next, k);
    Matrix next_centroids = update_centroids(features, next_members, centroids);
    const Scalar next_objective = clustering_objective(features, next_members, next_centroids);
    if (!(next_objective > objective)) break;
    assign = std::move(next);
    members = std::move(next_members);
    centroids = std::move(next_centroids);
    objective = next_objective;
    out.objective_trace.push_back(objective);
    ++out.iterations;
  }

  out.members = std::move(members);
  out.centroids = std::move(centroids);
  return out;
}

std::vector<int> ClusterIndex::labels() const {
  std::vector<int> out;
  for (const auto& c : clusters) {
    if (out.empty() || out.back() != c.label) out.push_back(c.label);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> ClusterIndex::clusters_of_class(int label) const {
  std::vector<int> out;
  for (const auto& c : clusters) {
    if (c.label == label) out.push_back(c.id);
  }
  return out;
}

Matrix ClusterIndex::centroid_matrix() const {
  if (clusters.empty()) return {};
  Matrix m(clusters.front().centroid.size(), static_cast<Index>(clusters.size()));
  for (std::size_t c = 0; c < clusters.size(); ++c) m.col(static_cast<Index>(c)) = clusters[c].centroid;
  return m;
}

std::vector<int> ClusterIndex::assignment(std::size_t num_samples) const {
  std::vector<int> out(num_samples, -1);
  for (const auto& c : clusters) {
    for (Index i : c.members) out[static_cast<std::size_t>(i)] = c.id;
  }
  return out;
}

ClusterIndex build_cluster_index(const ConstMatrixRef& features, std::span<const Index> sample_ids,
                                 std::span<const int> labels, const ClusterOptions& opts) {
  if (sample_ids.empty()) throw Error(Errc::EmptyInput, "no samples to cluster");
  std::map<int, std::vector<Index>> by_class;
  for (Index id : sample_ids) by_class[labels[static_cast<std::size_t>(id)]].push_back(id);

  ClusterIndex index;
  index.cluster_size = opts.cluster_size;
  for (auto& [label, ids] : by_class) {
    std::sort(ids.begin(), ids.end());
    Matrix sub(features.rows(), static_cast<Index>(ids.size()));
    for (std::size_t j = 0; j < ids.size(); ++j) sub.col(static_cast<Index>(j)) = features.col(ids[j]);
    ClusterOptions class_opts = opts;
    class_opts.seed = opts.seed + static_cast<std::uint64_t>(label);
    ClassClusters cc = cluster_class(sub, class_opts);
    for (std::size_t k = 0; k < cc.members.size(); ++k) {
      Cluster c;
      c.id = static_cast<int>(index.clusters.size());
      c.label = label;
      for (Index local : cc.members[k]) c.members.push_back(ids[static_cast<std::size_t>(local)]);
      c.centroid = cc.centroids.col(static_cast<Index>(k));
      index.clusters.push_back(std::move(c));
    }
  }
  return index;
}

ClusterIndex refresh_all(const ConstMatrixRef& features, const ClusterIndex& previous,
                         std::span<const int> labels, std::span<const Scalar> sample_losses,
                         const ClusterOptions& opts) {
  std::vector<Index> ids;
  for (const auto& c : previous.clusters) ids.insert(ids.end(), c.members.begin(), c.members.end());
  std::sort(ids.begin(), ids.end());
  ClusterIndex next = build_cluster_index(features, ids, labels, opts);
  for (auto& c : next.clusters) {
    Scalar sum = 0;
    std::size_t seen = 0;
    for (Index i : c.members) {
      const auto u = static_cast<std::size_t>(i);
      if (u < sample_losses.size() && !std::isnan(sample_losses[u])) {
        sum += sample_losses[u];
        ++seen;
      }
    }
    c.running_loss = seen > 0 ? sum / static_cast<Scalar>(seen)
                              : std::numeric_limits<Scalar>::infinity();
  }
  return next;
}

void recompute_centroids(ClusterIndex& index, const ConstMatrixRef& features) {
  for (auto& c : index.clusters) {
    if (c.members.empty()) continue;
    const Vector s = member_sum(features, c.members);
    if (s.norm() / static_cast<Scalar>(c.members.size()) >= kZeroNormTol) c.centroid = s.normalized();
  }
}

nlohmann::json to_json(const ClusterIndex& index) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& c : index.clusters) {
    nlohmann::json jc;
    jc["id"] = c.id;
    jc["label"] = c.label;
    jc["members"] = c.members;
    jc["centroid"] = std::vector<Scalar>(c.centroid.data(), c.centroid.data() + c.centroid.size());
    if (std::isfinite(c.running_loss)) {
      jc["running_loss"] = c.running_loss;
    } else {
      jc["running_loss"] = nullptr;
    }
    clusters.push_back(std::move(jc));
  }
  return {{"format", "clmle-cluster-index"},
          {"version", kSnapshotVersion},
          {"cluster_size", index.cluster_size},
          {"clusters", std::move(clusters)}};
}

ClusterIndex cluster_index_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "clmle-cluster-index" || j.at("version") != kSnapshotVersion) {
      throw Error(Errc::IoError, "unsupported cluster index snapshot");
    }
    ClusterIndex index;
    index.cluster_size = j.at("cluster_size").get<std::size_t>();
    for (const auto& jc : j.at("clusters")) {
      Cluster c;
      c.id = jc.at("id").get<int>();
      c.label = jc.at("label").get<int>();
      c.members = jc.at("members").get<std::vector<Index>>();
      const auto centroid = jc.at("centroid").get<std::vector<Scalar>>();
      c.centroid = Eigen::Map<const Vector>(centroid.data(), static_cast<Index>(centroid.size()));
      c.running_loss = jc.at("running_loss").is_null() ? std::numeric_limits<Scalar>::infinity()
                                                        : jc.at("running_loss").get<Scalar>();
      if (c.id != static_cast<int>(index.clusters.size())) {
        throw Error(Errc::IoError, "cluster ids must be dense and ordered");
      }
      index.clusters.push_back(std::move(c));
    }
    return index;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IoError, std::string("malformed cluster index: ") + e.what());
  }
}

}  // namespace clmle
