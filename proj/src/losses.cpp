#include "clmle/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace clmle {

namespace {

Scalar sq_dist(const ConstMatrixRef& e, Index i, Index j) {
  return (e.col(i) - e.col(j)).squaredNorm();
}

// d/da D(a,x) = 2(a - x), d/dx D(a,x) = -2(a - x); scaled by `coef`.
void add_dist_grad(Matrix& grads, const ConstMatrixRef& e, Index a, Index x, Scalar coef) {
  const Vector diff = 2 * coef * (e.col(a) - e.col(x));
  grads.col(a) += diff;
  grads.col(x) -= diff;
}

struct Lookup {
  std::vector<Index> ids;  // ascending
  std::vector<int> cluster;
  std::vector<int> label;
};

Lookup make_lookup(const BatchStructure& s, std::size_t n) {
  Lookup lk;
  lk.cluster = s.cluster_of(n);
  lk.label = s.label_of(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (lk.cluster[i] >= 0) lk.ids.push_back(static_cast<Index>(i));
  }
  return lk;
}

void check_anchor_weights(std::span<const Scalar> weights, Index cols) {
  if (weights.empty()) return;
  if (weights.size() != static_cast<std::size_t>(cols)) {
    throw Error(Errc::ShapeMismatch, "one anchor weight per embedding column required");
  }
  for (Scalar w : weights) {
    if (!(w > 0)) throw Error(Errc::NonPositiveWeight, "anchor weights must be > 0");
  }
}

Scalar weight_of(std::span<const Scalar> weights, Index i) {
  return weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
}

Quintuplet fill_roles(const Lookup& lk, const ConstMatrixRef& e, Index anchor) {
  const auto ua = static_cast<std::size_t>(anchor);
  if (anchor < 0 || ua >= lk.cluster.size() || lk.cluster[ua] < 0) {
    throw Error(Errc::InsufficientStructure, "anchor is not part of any cluster");
  }
  const int m = lk.cluster[ua];
  const int c = lk.label[ua];
  constexpr Scalar inf = std::numeric_limits<Scalar>::infinity();
  Scalar far_in = -inf, near_same = inf, far_same = -inf, near_other = inf;
  Index p_plus = -1, p_minus = -1, p_mm = -1, neg = -1;
  for (Index j : lk.ids) {
    if (j == anchor) continue;
    const auto uj = static_cast<std::size_t>(j);
    const Scalar d = sq_dist(e, anchor, j);
    if (lk.label[uj] != c) {
      if (d < near_other) near_other = d, neg = j;
    } else if (lk.cluster[uj] == m) {
      if (d > far_in) far_in = d, p_plus = j;
    } else {
      if (d < near_same) near_same = d, p_minus = j;
      if (d > far_same) far_same = d, p_mm = j;
    }
  }
  if (p_plus < 0) throw Error(Errc::InsufficientStructure, "anchor's cluster has no other member");
  if (p_minus < 0) throw Error(Errc::InsufficientStructure, "anchor's class has a single cluster");
  if (neg < 0) throw Error(Errc::InsufficientStructure, "no sample of another class");
  return {anchor, p_plus, p_minus, p_mm, neg};
}

}  // namespace

std::size_t BatchStructure::num_samples() const {
  std::size_t n = 0;
  for (const auto& m : members) n += m.size();
  return n;
}

std::vector<int> BatchStructure::cluster_of(std::size_t n) const {
  std::vector<int> out(n, -1);
  for (std::size_t m = 0; m < members.size(); ++m) {
    for (Index i : members[m]) {
      if (static_cast<std::size_t>(i) < n) out[static_cast<std::size_t>(i)] = static_cast<int>(m);
    }
  }
  return out;
}

std::vector<int> BatchStructure::label_of(std::size_t n) const {
  std::vector<int> out(n, -1);
  for (std::size_t m = 0; m < members.size(); ++m) {
    for (Index i : members[m]) {
      if (static_cast<std::size_t>(i) < n) out[static_cast<std::size_t>(i)] = labels[m];
    }
  }
  return out;
}

BatchStructure structure_of(const ClusterIndex& index) {
  BatchStructure s;
  for (const auto& c : index.clusters) {
    s.members.push_back(c.members);
    s.labels.push_back(c.label);
  }
  return s;
}

Scalar log_sum_exp(const ConstVectorRef& x) {
  if (x.size() == 0) return -std::numeric_limits<Scalar>::infinity();
  const Scalar mx = x.maxCoeff();
  return mx + std::log((x.array() - mx).exp().sum());
}

LossOutput triplet_loss(const ConstMatrixRef& embeddings, std::span<const Triplet> triplets,
                        Scalar margin, std::span<const Scalar> anchor_weights) {
  if (triplets.empty()) throw Error(Errc::EmptyTripletSet, "no triplets");
  const Index b = embeddings.cols();
  check_anchor_weights(anchor_weights, b);
  LossOutput out;
  out.grads = Matrix::Zero(embeddings.rows(), b);
  out.per_sample = Vector::Zero(b);
  const Scalar scale = 1.0 / static_cast<Scalar>(triplets.size());
  for (const auto& t : triplets) {
    const Scalar h = sq_dist(embeddings, t.anchor, t.positive) -
                     sq_dist(embeddings, t.anchor, t.negative) + margin;
    if (h <= 0) continue;
    const Scalar w = weight_of(anchor_weights, t.anchor) * scale;
    out.value += w * h;
    out.per_sample[t.anchor] += h;
    add_dist_grad(out.grads, embeddings, t.anchor, t.positive, w);
    add_dist_grad(out.grads, embeddings, t.anchor, t.negative, -w);
  }
  return out;
}

LossOutput lmle_loss(const ConstMatrixRef& embeddings, std::span<const Quintuplet> quintuplets,
                     const LmleMargins& margins, const BatchStructure& structure,
                     std::span<const Scalar> anchor_weights) {
  if (quintuplets.empty()) throw Error(Errc::EmptyQuintupletSet, "no quintuplets");
  const Index b = embeddings.cols();
  check_anchor_weights(anchor_weights, b);
  const auto cluster = structure.cluster_of(static_cast<std::size_t>(b));
  const auto label = structure.label_of(static_cast<std::size_t>(b));
  auto cl = [&](Index i) { return cluster[static_cast<std::size_t>(i)]; };
  auto lb = [&](Index i) { return label[static_cast<std::size_t>(i)]; };

  for (const auto& q : quintuplets) {
    for (Index id : {q.anchor, q.p_plus, q.p_minus, q.p_minus_minus, q.negative}) {
      if (id < 0 || id >= b || cl(id) < 0) {
        throw Error(Errc::RoleViolation, "quintuplet member outside the batch structure");
      }
    }
    const int c = lb(q.anchor);
    const bool ok = q.p_plus != q.anchor && lb(q.p_plus) == c && lb(q.p_minus) == c &&
                    lb(q.p_minus_minus) == c && lb(q.negative) != c &&
                    cl(q.p_plus) == cl(q.anchor) && cl(q.p_minus) != cl(q.anchor) &&
                    cl(q.p_minus_minus) != cl(q.anchor);
    if (!ok) throw Error(Errc::RoleViolation, "quintuplet roles inconsistent with clusters");
  }

  LossOutput out;
  out.grads = Matrix::Zero(embeddings.rows(), b);
  out.per_sample = Vector::Zero(b);
  const Scalar scale = 1.0 / static_cast<Scalar>(quintuplets.size());
  for (const auto& q : quintuplets) {
    const Index a = q.anchor;
    const Scalar w = weight_of(anchor_weights, a) * scale;
    const Scalar d_pp = sq_dist(embeddings, a, q.p_plus);
    const Scalar d_pm = sq_dist(embeddings, a, q.p_minus);
    const Scalar d_pmm = sq_dist(embeddings, a, q.p_minus_minus);
    const Scalar d_n = sq_dist(embeddings, a, q.negative);
    const std::array<Scalar, 3> slack = {margins.g1 + d_pp - d_pm, margins.g2 + d_pm - d_pmm,
                                         margins.g3 + d_pmm - d_n};
    const std::array<std::pair<Index, Index>, 3> pairs = {
        std::pair{q.p_plus, q.p_minus}, std::pair{q.p_minus, q.p_minus_minus},
        std::pair{q.p_minus_minus, q.negative}};
    for (std::size_t h = 0; h < 3; ++h) {
      if (slack[h] <= 0) continue;
      out.value += w * slack[h];
      out.per_sample[a] += slack[h];
      add_dist_grad(out.grads, embeddings, a, pairs[h].first, w);
      add_dist_grad(out.grads, embeddings, a, pairs[h].second, -w);
    }
  }
  return out;
}

Quintuplet sample_quintuplet(const BatchStructure& structure, const ConstMatrixRef& embeddings,
                             Index anchor) {
  return fill_roles(make_lookup(structure, static_cast<std::size_t>(embeddings.cols())), embeddings,
                    anchor);
}

std::vector<Quintuplet> sample_quintuplets(const BatchStructure& structure,
                                           const ConstMatrixRef& embeddings,
                                           std::span<const Index> anchors) {
  const Lookup lk = make_lookup(structure, static_cast<std::size_t>(embeddings.cols()));
  std::vector<Quintuplet> out;
  out.reserve(anchors.size());
  for (Index a : anchors) {
    try {
      out.push_back(fill_roles(lk, embeddings, a));
    } catch (const Error& e) {
      if (e.code() != Errc::InsufficientStructure) throw;
    }
  }
  return out;
}

LossOutput clmle_loss(const ConstMatrixRef& embeddings, const BatchStructure& structure,
                      const ClmleConfig& config) {
  const std::size_t num_clusters = structure.num_clusters();
  if (num_clusters < 2) throw Error(Errc::SingleClusterBatch, "need at least two clusters");
  if (structure.labels.size() != num_clusters) {
    throw Error(Errc::ShapeMismatch, "one label per cluster required");
  }
  const Index d = embeddings.rows();
  const Index b = embeddings.cols();
  const bool weighted = !config.cost_weights.empty();
  if (weighted && config.cost_weights.size() != static_cast<std::size_t>(b)) {
    throw Error(Errc::ShapeMismatch, "one cost weight per embedding column required");
  }
  if (weighted) {
    for (Scalar w : config.cost_weights) {
      if (!(w > 0)) throw Error(Errc::NonPositiveWeight, "cost weights must be > 0");
    }
  }

  const auto mcount = static_cast<Index>(num_clusters);
  Matrix centroids(d, mcount);
  Vector sum_norms(mcount);
  std::size_t total = 0;
  for (Index m = 0; m < mcount; ++m) {
    const auto& mem = structure.members[static_cast<std::size_t>(m)];
    if (mem.empty()) throw Error(Errc::EmptyInput, "cluster without batch members");
    Vector s = Vector::Zero(d);
    for (Index i : mem) s += embeddings.col(i);
    sum_norms[m] = s.norm();
    if (!(sum_norms[m] / static_cast<Scalar>(mem.size()) >= kZeroNormTol)) {
      throw Error(Errc::DegenerateCentroid, "batch centroid vanishes");
    }
    centroids.col(m) = s / sum_norms[m];
    total += mem.size();
  }
  const Scalar inv_n = 1.0 / static_cast<Scalar>(total);

  // competitor sets per cluster
  std::vector<std::vector<Index>> between(num_clusters), within(num_clusters);
  for (Index m = 0; m < mcount; ++m) {
    for (Index k = 0; k < mcount; ++k) {
      const int cm = structure.labels[static_cast<std::size_t>(m)];
      const int ck = structure.labels[static_cast<std::size_t>(k)];
      if (ck != cm) {
        between[static_cast<std::size_t>(m)].push_back(k);
      } else if (k != m) {
        within[static_cast<std::size_t>(m)].push_back(k);
      }
    }
  }

  LossOutput out;
  out.grads = Matrix::Zero(d, b);
  out.per_sample = Vector::Zero(b);
  Matrix centroid_grads = Matrix::Zero(d, mcount);
  Vector sims(mcount), sim_grads(mcount);

  for (Index m = 0; m < mcount; ++m) {
    const auto um = static_cast<std::size_t>(m);
    for (Index i : structure.members[um]) {
      sims.noalias() = centroids.transpose() * embeddings.col(i);
      sim_grads.setZero();
      const Scalar w = weighted ? config.cost_weights[static_cast<std::size_t>(i)] : 1.0;
      Scalar sample_loss = 0;
      for (const auto& [competitors, margin] :
           {std::pair{&between[um], config.a1}, std::pair{&within[um], config.a2}}) {
        if (competitors->empty()) continue;
        Vector comp(static_cast<Index>(competitors->size()));
        for (std::size_t j = 0; j < competitors->size(); ++j) {
          comp[static_cast<Index>(j)] = sims[(*competitors)[j]];
        }
        const Scalar lse = log_sum_exp(comp);
        const Scalar t = margin - sims[m] + lse;
        if (t <= 0) continue;
        sample_loss += t;
        const Scalar coef = w * inv_n;
        sim_grads[m] -= coef;
        for (std::size_t j = 0; j < competitors->size(); ++j) {
          sim_grads[(*competitors)[j]] += coef * std::exp(comp[static_cast<Index>(j)] - lse);
        }
      }
      if (sample_loss == 0) continue;
      out.per_sample[i] = sample_loss;
      out.value += w * inv_n * sample_loss;
      out.grads.col(i) += centroids * sim_grads;
      centroid_grads += embeddings.col(i) * sim_grads.transpose();
    }
  }

  // mu = s / |s|  =>  dL/ds = (I - mu mu^T) dL/dmu / |s|, and ds/df_j = I for members.
  for (Index m = 0; m < mcount; ++m) {
    const Vector g = centroid_grads.col(m);
    const Vector mu = centroids.col(m);
    const Vector gs = (g - mu * mu.dot(g)) / sum_norms[m];
    for (Index j : structure.members[static_cast<std::size_t>(m)]) out.grads.col(j) += gs;
  }
  return out;
}

SoftmaxLossOutput softmax_ce_loss(const ConstMatrixRef& embeddings, std::span<const int> labels,
                                  const ConstMatrixRef& weights) {
  const Index b = embeddings.cols();
  const Index num_classes = weights.cols();
  if (weights.rows() != embeddings.rows() || labels.size() != static_cast<std::size_t>(b)) {
    throw Error(Errc::ShapeMismatch, "softmax weights / labels do not match embeddings");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw Error(Errc::LabelOutOfRange, "label outside weight columns");
  }
  SoftmaxLossOutput out;
  out.per_sample = Vector::Zero(b);
  Matrix scores = weights.transpose() * embeddings;  // C x B
  Matrix dscores(num_classes, b);
  const Scalar inv_b = b > 0 ? 1.0 / static_cast<Scalar>(b) : 0.0;
  for (Index i = 0; i < b; ++i) {
    const Scalar lse = log_sum_exp(scores.col(i));
    const int y = labels[static_cast<std::size_t>(i)];
    out.per_sample[i] = lse - scores(y, i);
    out.value += inv_b * out.per_sample[i];
    dscores.col(i) = (scores.col(i).array() - lse).exp().matrix() * inv_b;
    dscores(y, i) -= inv_b;
  }
  out.grads = weights * dscores;
  out.weight_grads = embeddings * dscores.transpose();
  return out;
}

}  // namespace clmle
