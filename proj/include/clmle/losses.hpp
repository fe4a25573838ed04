#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "clmle/clustering.hpp"
#include "clmle/hypersphere.hpp"

namespace clmle {

/// Loss value plus gradient with respect to every embedding column of the
/// batch (zero columns for samples that did not contribute).
struct LossOutput {
  Scalar value = 0;
  Matrix grads;  // d x B
  /// Unweighted loss attributed to each sample; feeds the loss cache.
  Vector per_sample;
};

/// Cluster layout of a set of embedding columns: `members[m]` lists the
/// column ids in cluster m, `labels[m]` is that cluster's class.
struct BatchStructure {
  std::vector<std::vector<Index>> members;
  std::vector<int> labels;

  std::size_t num_clusters() const noexcept { return members.size(); }
  std::size_t num_samples() const;
  /// cluster and label of every column id in [0, n); -1 when absent.
  std::vector<int> cluster_of(std::size_t n) const;
  std::vector<int> label_of(std::size_t n) const;
};

/// Whole-index structure: members are global sample ids, so it pairs with an
/// embedding matrix that has one column per sample id.
BatchStructure structure_of(const ClusterIndex& index);

// ---------------------------------------------------------------- triplet

struct Triplet {
  Index anchor = 0;
  Index positive = 0;
  Index negative = 0;
};

/// Mean over triplets of [D(a,p) - D(a,n) + g]_+ with D the squared
/// Euclidean distance. Optional `anchor_weights` (one per embedding column)
/// scale each hinge by the weight of its anchor.
LossOutput triplet_loss(const ConstMatrixRef& embeddings, std::span<const Triplet> triplets,
                        Scalar margin, std::span<const Scalar> anchor_weights = {});

// ---------------------------------------------------------------- LMLE

struct Quintuplet {
  Index anchor = 0;
  Index p_plus = 0;        // most distant member of the anchor's cluster
  Index p_minus = 0;       // nearest same-class sample from another cluster
  Index p_minus_minus = 0; // most distant same-class sample from another cluster
  Index negative = 0;      // nearest sample of another class
};

struct LmleMargins {
  Scalar g1 = 0.1;
  Scalar g2 = 0.1;
  Scalar g3 = 0.1;
};

/// Triple-header hinge loss: mean over quintuplets of
///   [g1 + D(a,p+) - D(a,p-)]_+ + [g2 + D(a,p-) - D(a,p--)]_+ + [g3 + D(a,p--) - D(a,n)]_+.
/// Roles are validated against `structure`; `anchor_weights` as for
/// triplet_loss.
LossOutput lmle_loss(const ConstMatrixRef& embeddings, std::span<const Quintuplet> quintuplets,
                     const LmleMargins& margins, const BatchStructure& structure,
                     std::span<const Scalar> anchor_weights = {});

/// Fills the quintuplet roles of one anchor by exhaustive search over the
/// current embedding distances; ties go to the lowest id. Throws
/// InsufficientStructure when a role cannot be filled.
Quintuplet sample_quintuplet(const BatchStructure& structure, const ConstMatrixRef& embeddings,
                             Index anchor);

/// Same as sample_quintuplet for many anchors; anchors whose roles cannot be
/// filled are skipped.
std::vector<Quintuplet> sample_quintuplets(const BatchStructure& structure,
                                           const ConstMatrixRef& embeddings,
                                           std::span<const Index> anchors);

// ---------------------------------------------------------------- CLMLE

struct ClmleConfig {
  Scalar a1 = 0;  // between-class margin
  Scalar a2 = 0;  // within-class margin
  /// Cost weight per embedding column; empty means all ones.
  std::vector<Scalar> cost_weights;
};

/// Cluster-based large margin loss.
///
/// Centroids are the normalized sums of the batch members of each cluster
/// and are differentiated through. For member i of cluster m with
/// s_k = f_i^T mu_k:
///   between = [ a1 - s_m + log sum_{k: c_k != c_m} exp(s_k) ]_+
///   within  = [ a2 - s_m + log sum_{k != m, c_k == c_m} exp(s_k) ]_+
/// and value = sum_i w_i (between + within) / (number of batch members).
/// A term with no competing clusters contributes zero.
LossOutput clmle_loss(const ConstMatrixRef& embeddings, const BatchStructure& structure,
                      const ClmleConfig& config);

// ---------------------------------------------------------------- softmax

struct SoftmaxLossOutput : LossOutput {
  Matrix weight_grads;  // d x C
};

/// Mean cross-entropy of softmax(W^T f) against `labels`.
SoftmaxLossOutput softmax_ce_loss(const ConstMatrixRef& embeddings, std::span<const int> labels,
                                  const ConstMatrixRef& weights);

/// log(sum(exp(x))) evaluated with the max subtracted.
Scalar log_sum_exp(const ConstVectorRef& x);

}  // namespace clmle
