#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "clmle/clustering.hpp"
#include "clmle/losses.hpp"

namespace clmle {

/// One training batch: a query cluster followed by its retrieved clusters,
/// with the sampled members of each and a cost weight per sample.
struct MiniBatch {
  int query_cluster = -1;
  std::vector<int> clusters;                 // M ids, query first
  std::vector<std::vector<Index>> members;   // sampled global sample ids per cluster
  std::vector<int> cluster_labels;
  std::vector<Index> sample_ids;             // flattened members, cluster by cluster
  std::vector<int> labels;                   // per flattened sample
  std::vector<Scalar> weights;               // per flattened sample, mean 1

  std::size_t size() const noexcept { return sample_ids.size(); }
  /// Structure over batch-local column ids 0..size()-1.
  BatchStructure local_structure() const;
};

/// Per-cluster moving average of member losses, plus the latest loss seen
/// for every sample (NaN when never scored).
struct LossCache {
  std::vector<Scalar> cluster_loss;  // +inf when unscored
  std::vector<Scalar> sample_loss;
  Scalar decay = 0.5;
};

/// Cache seeded from the running losses stored in the index.
LossCache make_loss_cache(const ClusterIndex& index, std::size_t num_samples, Scalar decay = 0.5);

/// Round-robin position over the classes of an index.
struct ClassCursor {
  std::size_t next = 0;
};

/// Picks the next class round-robin and returns its cluster with the highest
/// cached loss (lowest id on ties).
int select_query_cluster(const ClusterIndex& index, const LossCache& cache, ClassCursor& cursor);

/// The `count` clusters most similar to `query_cluster` by centroid inner
/// product, ties to the lowest id. If the result lacks a same-class (or a
/// different-class) cluster while one exists, the least similar cluster of
/// the other kind is swapped for the most similar missing-kind cluster.
std::vector<int> retrieve_nearest_clusters(const ClusterIndex& index, int query_cluster,
                                           std::size_t count);

/// Samples min(n_sub, size) members of every cluster without replacement and
/// assigns w_i = B / (C_batch * n_{y_i}).
MiniBatch subsample_and_weight(const ClusterIndex& index, std::span<const int> clusters,
                               std::size_t n_sub, std::mt19937_64& rng);

/// Inverse class frequency weights for a label list, mean 1.
std::vector<Scalar> inverse_frequency_weights(std::span<const int> labels);

/// ema <- (1 - decay) ema + decay * mean member loss for each batch cluster;
/// unscored (+inf) entries are replaced outright.
void update_loss_cache(LossCache& cache, const ConstVectorRef& per_sample_losses,
                       const MiniBatch& batch);

}  // namespace clmle
