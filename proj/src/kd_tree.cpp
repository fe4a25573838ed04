#include "clmle/kd_tree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace clmle {

namespace {

// Pruning slack on the similarity bound; covers rounding in both the box
// distance and in points that are unit-norm only to ~1e-15.
constexpr Scalar kPruneSlack = 1e-9;

bool better(const KdTree::Hit& a, const KdTree::Hit& b) {
  return a.similarity != b.similarity ? a.similarity > b.similarity : a.index < b.index;
}

void offer(std::vector<KdTree::Hit>& heap, std::size_t k, KdTree::Hit hit) {
  // heap front is the worst kept hit
  if (heap.size() < k) {
    heap.push_back(hit);
    std::push_heap(heap.begin(), heap.end(), better);
  } else if (better(hit, heap.front())) {
    std::pop_heap(heap.begin(), heap.end(), better);
    heap.back() = hit;
    std::push_heap(heap.begin(), heap.end(), better);
  }
}

Scalar box_sq_dist(const ConstVectorRef& q, const Vector& lo, const Vector& hi) {
  Scalar d = 0;
  for (Index i = 0; i < q.size(); ++i) {
    const Scalar v = q[i] < lo[i] ? lo[i] - q[i] : (q[i] > hi[i] ? q[i] - hi[i] : 0.0);
    d += v * v;
  }
  return d;
}

}  // namespace

KdTree::KdTree(Matrix points, std::size_t leaf_size)
    : points_(std::move(points)), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
  order_.resize(static_cast<std::size_t>(points_.cols()));
  std::iota(order_.begin(), order_.end(), Index{0});
  if (points_.cols() > 0) build(0, points_.cols());
}

int KdTree::build(Index begin, Index end) {
  Node node;
  node.begin = begin;
  node.end = end;
  node.lo = Vector::Constant(dim(), std::numeric_limits<Scalar>::infinity());
  node.hi = Vector::Constant(dim(), -std::numeric_limits<Scalar>::infinity());
  for (Index j = begin; j < end; ++j) {
    node.lo = node.lo.cwiseMin(points_.col(order_[j]));
    node.hi = node.hi.cwiseMax(points_.col(order_[j]));
  }
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (static_cast<std::size_t>(end - begin) <= leaf_size_) return id;

  Index axis = 0;
  (nodes_[id].hi - nodes_[id].lo).maxCoeff(&axis);
  const Index mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](Index a, Index b) { return points_(axis, a) < points_(axis, b); });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search_node(int id, const ConstVectorRef& query, std::size_t k,
                         std::vector<Hit>& heap, std::size_t& evals) const {
  const Node& node = nodes_[static_cast<std::size_t>(id)];
  if (heap.size() == k) {
    const Scalar bound = 1.0 - 0.5 * box_sq_dist(query, node.lo, node.hi);
    if (bound + kPruneSlack < heap.front().similarity) return;
  }
  if (node.left < 0) {
    for (Index j = node.begin; j < node.end; ++j) {
      const Index p = order_[j];
      offer(heap, k, {p, points_.col(p).dot(query)});
      ++evals;
    }
    return;
  }
  const Node& l = nodes_[static_cast<std::size_t>(node.left)];
  const Node& r = nodes_[static_cast<std::size_t>(node.right)];
  const bool left_first = box_sq_dist(query, l.lo, l.hi) <= box_sq_dist(query, r.lo, r.hi);
  search_node(left_first ? node.left : node.right, query, k, heap, evals);
  search_node(left_first ? node.right : node.left, query, k, heap, evals);
}

std::vector<KdTree::Hit> KdTree::search(const ConstVectorRef& query, std::size_t k,
                                        std::size_t* evaluations) const {
  if (query.size() != dim()) throw Error(Errc::DimensionMismatch, "query dimension differs");
  k = std::min<std::size_t>(k, static_cast<std::size_t>(size()));
  std::vector<Hit> heap;
  if (k == 0) return heap;
  heap.reserve(k);
  std::size_t evals = 0;
  search_node(0, query, k, heap, evals);
  std::sort(heap.begin(), heap.end(), better);
  if (evaluations) *evaluations += evals;
  return heap;
}

std::vector<KdTree::Hit> brute_force_search(const ConstMatrixRef& points,
                                            const ConstVectorRef& query, std::size_t k) {
  std::vector<KdTree::Hit> all;
  all.reserve(static_cast<std::size_t>(points.cols()));
  for (Index j = 0; j < points.cols(); ++j) all.push_back({j, points.col(j).dot(query)});
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

}  // namespace clmle
