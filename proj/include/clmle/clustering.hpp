#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "clmle/hypersphere.hpp"
#include "json.hpp"

namespace clmle {

/// Result of balanced spherical k-means on one class. Member indices refer
/// to columns of the feature matrix handed to cluster_class().
struct ClassClusters {
  std::vector<std::vector<Index>> members;
  Matrix centroids;  // d x K, unit columns
  /// Objective after each full (assign, recompute) iteration.
  std::vector<Scalar> objective_trace;
  int iterations = 0;
};

struct ClusterOptions {
  std::size_t cluster_size = 20;
  int max_iters = 50;
  std::uint64_t seed = 0;
};

/// Number of clusters for a class of the given size: max(1, floor(n / l)).
std::size_t cluster_count(std::size_t class_size, std::size_t cluster_size);

/// Balanced spherical k-means over the unit columns of `features`.
///
/// Each iteration assigns samples greedily in descending order of
/// (sample, centroid) similarity with capacity l per cluster; the
/// r = n mod l leftovers then go to their most similar centroid with at
/// most ceil(r / K) extras per cluster. A new assignment is kept only if it
/// strictly improves the objective under the current centroids, so the
/// objective trace is non-decreasing.
ClassClusters cluster_class(const ConstMatrixRef& features, const ClusterOptions& opts);

/// Normalized arithmetic mean of the columns. Throws DegenerateCentroid when
/// the mean has norm below 1e-12.
UnitVector recompute_centroid(const ConstMatrixRef& member_features);

/// Sum over clusters of f(x_i)^T mu_k for the members of cluster k.
/// Empty clusters contribute nothing.
Scalar clustering_objective(const ConstMatrixRef& features,
                            std::span<const std::vector<Index>> members,
                            const ConstMatrixRef& centroids);

struct Cluster {
  int id = 0;
  int label = 0;
  std::vector<Index> members;  // global sample ids
  Vector centroid;
  /// Running loss used for query selection; +inf when never scored.
  Scalar running_loss = std::numeric_limits<Scalar>::infinity();
};

/// Clusters of every class. Cluster ids are dense and equal to their
/// position in `clusters`; classes appear in ascending label order.
struct ClusterIndex {
  std::size_t cluster_size = 0;
  std::vector<Cluster> clusters;

  std::size_t size() const noexcept { return clusters.size(); }
  std::vector<int> labels() const;
  std::vector<int> clusters_of_class(int label) const;
  Matrix centroid_matrix() const;
  /// cluster id per sample id; -1 for ids that belong to no cluster.
  std::vector<int> assignment(std::size_t num_samples) const;
};

/// Clusters all classes. `features` holds one unit column per sample id,
/// `sample_ids` selects the training ids to cluster and `labels` is indexed
/// by sample id. Class c is clustered with seed `opts.seed + c`.
ClusterIndex build_cluster_index(const ConstMatrixRef& features, std::span<const Index> sample_ids,
                                 std::span<const int> labels, const ClusterOptions& opts);

/// Re-clusters every class of `previous` on the latest features. Running
/// losses are reset to the mean of the previously observed per-sample losses
/// of each new cluster's members (NaN entries mean unobserved), or +inf when
/// no member has been scored.
ClusterIndex refresh_all(const ConstMatrixRef& features, const ClusterIndex& previous,
                         std::span<const int> labels, std::span<const Scalar> sample_losses,
                         const ClusterOptions& opts);

/// Recomputes every centroid from `features` keeping the partition fixed.
/// Degenerate clusters keep their old centroid.
void recompute_centroids(ClusterIndex& index, const ConstMatrixRef& features);

/// Versioned snapshot: ids, labels, members, centroids and running losses.
nlohmann::json to_json(const ClusterIndex& index);
ClusterIndex cluster_index_from_json(const nlohmann::json& j);

}  // namespace clmle
