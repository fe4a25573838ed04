#include "clmle/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "clmle/losses.hpp"
#include "clmle/metrics.hpp"

namespace clmle {

ClusterSearchIndex build_index(const ClusterIndex& clusters, std::size_t n_retrieve) {
  if (clusters.size() == 0) throw Error(Errc::EmptyIndex, "no centroids to index");
  if (n_retrieve < 1) throw Error(Errc::InvalidCounts, "N must be >= 1");
  ClusterSearchIndex index;
  index.tree = KdTree(clusters.centroid_matrix());
  for (const auto& c : clusters.clusters) {
    index.cluster_ids.push_back(c.id);
    index.labels.push_back(c.label);
  }
  index.n_retrieve = std::min(n_retrieve, clusters.size());
  return index;
}

std::vector<RetrievedCluster> knn_clusters(const ClusterSearchIndex& index, const UnitVector& query,
                                           std::size_t* evaluations) {
  // tree point order equals cluster id order, so point-index ties match id ties
  const auto hits = index.tree.search(query.vec(), index.n_retrieve, evaluations);
  std::vector<RetrievedCluster> out;
  out.reserve(hits.size());
  for (const auto& h : hits) {
    const auto p = static_cast<std::size_t>(h.index);
    out.push_back({index.cluster_ids[p], index.labels[p], h.similarity});
  }
  return out;
}

int predict_from_retrieved(std::span<const RetrievedCluster> retrieved) {
  if (retrieved.empty()) throw Error(Errc::EmptyRetrieval, "nothing retrieved");
  std::map<int, Scalar> min_sim;
  for (const auto& r : retrieved) {
    auto [it, inserted] = min_sim.try_emplace(r.label, r.similarity);
    if (!inserted) it->second = std::min(it->second, r.similarity);
  }
  if (min_sim.size() == 1) return min_sim.begin()->first;

  int best = -1;
  Scalar best_score = -std::numeric_limits<Scalar>::infinity();
  Vector others(static_cast<Index>(retrieved.size()));
  for (const auto& [label, s_min] : min_sim) {
    Index n = 0;
    for (const auto& r : retrieved) {
      if (r.label != label) others[n++] = r.similarity;
    }
    const Scalar score = s_min - log_sum_exp(others.head(n));
    if (best < 0 || score > best_score) {
      best = label;
      best_score = score;
    }
  }
  return best;
}

int predict(const ClusterSearchIndex& index, const UnitVector& query) {
  return predict_from_retrieved(knn_clusters(index, query));
}

std::vector<int> predict_all(const ClusterSearchIndex& index, const ConstMatrixRef& embeddings) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(embeddings.cols()));
  for (Index i = 0; i < embeddings.cols(); ++i) {
    out.push_back(predict(index, UnitVector::trusted(embeddings.col(i))));
  }
  return out;
}

std::vector<std::size_t> n_retrieve_grid(std::size_t num_centroids) {
  if (num_centroids < 20) return {std::max<std::size_t>(1, num_centroids)};
  std::vector<std::size_t> grid;
  for (std::size_t n = 20; n <= 200 && n <= num_centroids; n += 10) grid.push_back(n);
  return grid;
}

std::size_t tune_n(std::size_t num_centroids, const std::function<Scalar(std::size_t)>& score) {
  std::size_t best_n = 0;
  Scalar best = -std::numeric_limits<Scalar>::infinity();
  for (std::size_t n : n_retrieve_grid(num_centroids)) {
    const Scalar s = score(n);
    if (best_n == 0 || s > best) {
      best = s;
      best_n = n;
    }
  }
  return best_n;
}

std::size_t tune_n(const ClusterIndex& clusters, const ConstMatrixRef& val_embeddings,
                   std::span<const int> val_labels, Scalar* best_score) {
  const auto grid = n_retrieve_grid(clusters.size());
  const auto index = build_index(clusters, grid.back());
  // the top-N list is a prefix of the top-Nmax list
  std::vector<std::vector<RetrievedCluster>> retrieved;
  retrieved.reserve(static_cast<std::size_t>(val_embeddings.cols()));
  for (Index i = 0; i < val_embeddings.cols(); ++i) {
    retrieved.push_back(knn_clusters(index, UnitVector::trusted(val_embeddings.col(i))));
  }
  auto score = [&](std::size_t n) {
    std::vector<int> pred;
    pred.reserve(retrieved.size());
    for (const auto& r : retrieved) {
      pred.push_back(predict_from_retrieved(std::span(r).first(std::min(n, r.size()))));
    }
    return balanced_accuracy(pred, val_labels);
  };
  const std::size_t n = tune_n(clusters.size(), score);
  if (best_score) *best_score = score(n);
  return n;
}

bool pairwise_verify(const UnitVector& a, const UnitVector& b, Scalar threshold) {
  return cos_sim(a, b) >= threshold;
}

}  // namespace clmle
