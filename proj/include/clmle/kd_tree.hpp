#pragma once

#include <cstddef>
#include <vector>

#include "clmle/hypersphere.hpp"

namespace clmle {

/// Exact top-k inner-product search over unit-norm points.
///
/// The tree splits on coordinates like an ordinary Euclidean KD-tree; for
/// unit vectors |q - p|^2 = 2 - 2 q.p, so a box at squared distance r from
/// the query cannot hold a point with similarity above 1 - r/2. Leaves rank
/// by the exact inner product (ties to the lower point index), and pruning
/// keeps a small slack, so results equal an exhaustive scan.
class KdTree {
 public:
  struct Hit {
    Index index;
    Scalar similarity;
  };

  KdTree() = default;
  /// `points` holds one unit vector per column; it is copied.
  explicit KdTree(Matrix points, std::size_t leaf_size = 8);

  Index size() const noexcept { return points_.cols(); }
  Index dim() const noexcept { return points_.rows(); }
  const Matrix& points() const noexcept { return points_; }

  /// The k most similar points sorted by descending similarity, ties by
  /// ascending index. `evaluations`, when given, is incremented by the
  /// number of inner products computed.
  std::vector<Hit> search(const ConstVectorRef& query, std::size_t k,
                          std::size_t* evaluations = nullptr) const;

 private:
  struct Node {
    Vector lo, hi;           // bounding box
    Index begin = 0, end = 0;  // range in order_
    int left = -1, right = -1;
  };

  int build(Index begin, Index end);
  void search_node(int node, const ConstVectorRef& query, std::size_t k, std::vector<Hit>& heap,
                   std::size_t& evals) const;

  Matrix points_;
  std::vector<Index> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_ = 8;
};

/// Exhaustive ranking with the same ordering rule as KdTree::search.
std::vector<KdTree::Hit> brute_force_search(const ConstMatrixRef& points,
                                            const ConstVectorRef& query, std::size_t k);

}  // namespace clmle
