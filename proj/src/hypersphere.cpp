#include "clmle/hypersphere.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace clmle {

Scalar cos_sim(const UnitVector& u, const UnitVector& v) {
  if (u.dim() != v.dim()) {
    throw Error(Errc::DimensionMismatch, "cos_sim on vectors of different dimension");
  }
  return std::clamp(u.vec().dot(v.vec()), Scalar(-1), Scalar(1));
}

void normalize_columns(MatrixRef m) {
  for (Index j = 0; j < m.cols(); ++j) {
    const Scalar n = m.col(j).norm();
    if (!(n >= kZeroNormTol)) {
      throw Error(Errc::ZeroVector, "column " + std::to_string(j) + " has norm below 1e-12");
    }
    m.col(j) /= n;
  }
}

MarginBounds margin_upper_bounds(std::size_t num_classes, std::size_t class_size,
                                 std::size_t total_size) {
  if (num_classes < 2 || class_size < 1 || class_size > total_size) {
    throw Error(Errc::InvalidCounts, "need C >= 2 and 1 <= Lc <= L");
  }
  constexpr Scalar two_pi = 2 * std::numbers::pi;
  MarginBounds b;
  b.a1_max = std::cos(0.0) - std::cos(two_pi / static_cast<Scalar>(num_classes));
  b.a2_max = std::cos(0.0) - std::cos(two_pi * static_cast<Scalar>(class_size) /
                                      static_cast<Scalar>(total_size));
  return b;
}

}  // namespace clmle
