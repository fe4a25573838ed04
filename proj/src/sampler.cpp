#include "clmle/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace clmle {

BatchStructure MiniBatch::local_structure() const {
  BatchStructure s;
  Index next = 0;
  for (std::size_t m = 0; m < members.size(); ++m) {
    std::vector<Index> local(members[m].size());
    std::iota(local.begin(), local.end(), next);
    next += static_cast<Index>(local.size());
    s.members.push_back(std::move(local));
    s.labels.push_back(cluster_labels[m]);
  }
  return s;
}

LossCache make_loss_cache(const ClusterIndex& index, std::size_t num_samples, Scalar decay) {
  LossCache cache;
  cache.decay = decay;
  cache.cluster_loss.reserve(index.size());
  for (const auto& c : index.clusters) cache.cluster_loss.push_back(c.running_loss);
  cache.sample_loss.assign(num_samples, std::numeric_limits<Scalar>::quiet_NaN());
  return cache;
}

int select_query_cluster(const ClusterIndex& index, const LossCache& cache, ClassCursor& cursor) {
  const auto classes = index.labels();
  if (classes.empty()) throw Error(Errc::EmptyIndex, "index has no clusters");
  const int label = classes[cursor.next % classes.size()];
  cursor.next = (cursor.next + 1) % classes.size();
  int best = -1;
  Scalar best_loss = -std::numeric_limits<Scalar>::infinity();
  for (int id : index.clusters_of_class(label)) {
    const Scalar l = cache.cluster_loss[static_cast<std::size_t>(id)];
    if (best < 0 || l > best_loss) {
      best = id;
      best_loss = l;
    }
  }
  return best;
}

std::vector<int> retrieve_nearest_clusters(const ClusterIndex& index, int query_cluster,
                                           std::size_t count) {
  if (index.size() < count + 1) {
    throw Error(Errc::TooFewClusters, "need at least " + std::to_string(count + 1) + " clusters");
  }
  const auto& q = index.clusters[static_cast<std::size_t>(query_cluster)];
  std::vector<std::pair<Scalar, int>> ranked;
  for (const auto& c : index.clusters) {
    if (c.id != query_cluster) ranked.emplace_back(q.centroid.dot(c.centroid), c.id);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });

  std::vector<int> picked;
  for (std::size_t j = 0; j < count; ++j) picked.push_back(ranked[j].second);

  auto same = [&](int id) { return index.clusters[static_cast<std::size_t>(id)].label == q.label; };
  // Swap the least similar cluster of the other kind for the best missing-kind
  // cluster, as long as the other kind keeps at least one slot.
  auto enforce = [&](bool want_same) {
    auto has = std::any_of(picked.begin(), picked.end(), [&](int id) { return same(id) == want_same; });
    if (has) return;
    auto candidate = std::find_if(ranked.begin() + static_cast<std::ptrdiff_t>(count), ranked.end(),
                                  [&](const auto& r) { return same(r.second) == want_same; });
    if (candidate == ranked.end() || picked.size() < 2) return;
    picked.back() = candidate->second;
  };
  enforce(true);
  enforce(false);
  return picked;
}

std::vector<Scalar> inverse_frequency_weights(std::span<const int> labels) {
  std::map<int, std::size_t> counts;
  for (int y : labels) ++counts[y];
  const auto b = static_cast<Scalar>(labels.size());
  const auto c = static_cast<Scalar>(counts.size());
  std::vector<Scalar> w;
  w.reserve(labels.size());
  for (int y : labels) w.push_back(b / (c * static_cast<Scalar>(counts[y])));
  return w;
}

MiniBatch subsample_and_weight(const ClusterIndex& index, std::span<const int> clusters,
                               std::size_t n_sub, std::mt19937_64& rng) {
  if (n_sub < 1) throw Error(Errc::InvalidCounts, "n_sub must be >= 1");
  MiniBatch batch;
  batch.query_cluster = clusters.empty() ? -1 : clusters.front();
  for (int id : clusters) {
    const auto& c = index.clusters[static_cast<std::size_t>(id)];
    std::vector<Index> pool = c.members;
    const std::size_t take = std::min(n_sub, pool.size());
    // partial Fisher-Yates
    for (std::size_t j = 0; j < take; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, pool.size() - 1);
      std::swap(pool[j], pool[pick(rng)]);
    }
    pool.resize(take);
    batch.clusters.push_back(id);
    batch.cluster_labels.push_back(c.label);
    for (Index s : pool) {
      batch.sample_ids.push_back(s);
      batch.labels.push_back(c.label);
    }
    batch.members.push_back(std::move(pool));
  }
  batch.weights = inverse_frequency_weights(batch.labels);
  return batch;
}

void update_loss_cache(LossCache& cache, const ConstVectorRef& per_sample_losses,
                       const MiniBatch& batch) {
  if (per_sample_losses.size() != static_cast<Index>(batch.size())) {
    throw Error(Errc::ShapeMismatch, "one loss per batch sample required");
  }
  Index pos = 0;
  for (std::size_t m = 0; m < batch.members.size(); ++m) {
    Scalar sum = 0;
    for (Index s : batch.members[m]) {
      const Scalar l = per_sample_losses[pos++];
      sum += l;
      if (static_cast<std::size_t>(s) < cache.sample_loss.size()) {
        cache.sample_loss[static_cast<std::size_t>(s)] = l;
      }
    }
    if (batch.members[m].empty()) continue;
    const Scalar mean = sum / static_cast<Scalar>(batch.members[m].size());
    Scalar& ema = cache.cluster_loss[static_cast<std::size_t>(batch.clusters[m])];
    ema = std::isinf(ema) ? mean : (1 - cache.decay) * ema + cache.decay * mean;
  }
}

}  // namespace clmle
