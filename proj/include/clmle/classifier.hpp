#pragma once

#include <functional>
#include <span>
#include <vector>

#include "clmle/clustering.hpp"
#include "clmle/kd_tree.hpp"

namespace clmle {

/// Immutable search structure over every centroid of a ClusterIndex.
struct ClusterSearchIndex {
  KdTree tree;
  std::vector<int> cluster_ids;  // per tree point
  std::vector<int> labels;       // per tree point
  std::size_t n_retrieve = 1;

  std::size_t size() const noexcept { return cluster_ids.size(); }
};

ClusterSearchIndex build_index(const ClusterIndex& clusters, std::size_t n_retrieve);

struct RetrievedCluster {
  int cluster_id;
  int label;
  Scalar similarity;
};

/// The N most similar centroids, descending similarity, ties by cluster id.
std::vector<RetrievedCluster> knn_clusters(const ClusterSearchIndex& index, const UnitVector& query,
                                           std::size_t* evaluations = nullptr);

/// k-nearest-cluster rule over the retrieved set: the class maximizing
///   min_{m in c} exp(s_m) / sum_{k not in c} exp(s_k),
/// evaluated as min s_m - logsumexp. Classes without a retrieved cluster are
/// not eligible; a single retrieved class wins outright; ties go to the
/// lowest label. Throws EmptyRetrieval on an empty list.
int predict_from_retrieved(std::span<const RetrievedCluster> retrieved);

int predict(const ClusterSearchIndex& index, const UnitVector& query);

/// Predicts every column of `embeddings`.
std::vector<int> predict_all(const ClusterSearchIndex& index, const ConstMatrixRef& embeddings);

/// Candidate N values: {20, 30, ..., 200} within [1, num_centroids], or just
/// {num_centroids} when fewer than 20 centroids exist.
std::vector<std::size_t> n_retrieve_grid(std::size_t num_centroids);

/// Chooses N from n_retrieve_grid maximizing `score(N)`; the smallest N wins
/// ties.
std::size_t tune_n(std::size_t num_centroids, const std::function<Scalar(std::size_t)>& score);

/// Convenience overload scoring balanced accuracy on a labeled validation set.
std::size_t tune_n(const ClusterIndex& clusters, const ConstMatrixRef& val_embeddings,
                   std::span<const int> val_labels, Scalar* best_score = nullptr);

/// Same pair iff cos_sim(a, b) >= threshold.
bool pairwise_verify(const UnitVector& a, const UnitVector& b, Scalar threshold);

}  // namespace clmle
