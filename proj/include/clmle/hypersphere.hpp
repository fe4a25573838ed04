#pragma once

#include <cstddef>

#include <Eigen/Dense>

#include "clmle/error.hpp"

namespace clmle {

using Scalar = double;
using Index = Eigen::Index;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using VectorRef = Eigen::Ref<Vector>;
using ConstVectorRef = Eigen::Ref<const Vector>;
using MatrixRef = Eigen::Ref<Matrix>;
using ConstMatrixRef = Eigen::Ref<const Matrix>;

/// Norms below this are treated as the zero vector.
constexpr Scalar kZeroNormTol = 1e-12;

/// A point on the unit hypersphere S^{d-1}, d >= 2.
///
/// The only ways to obtain one are normalize() and UnitVector::trusted();
/// the latter is for columns that are already normalized (encoder output,
/// stored centroids) and checks the norm in debug builds.
class UnitVector {
 public:
  UnitVector() = default;

  static UnitVector trusted(Vector v) {
    eigen_assert(std::abs(v.norm() - 1.0) < 1e-9);
    UnitVector u;
    u.v_ = std::move(v);
    return u;
  }

  const Vector& vec() const noexcept { return v_; }
  Index dim() const noexcept { return v_.size(); }
  Scalar operator[](Index i) const { return v_[i]; }
  UnitVector operator-() const { return trusted(-v_); }

 private:
  Vector v_;
};

template <typename Derived>
UnitVector normalize(const Eigen::MatrixBase<Derived>& v) {
  static_assert(Derived::ColsAtCompileTime == 1 || Derived::ColsAtCompileTime == Eigen::Dynamic);
  if (v.cols() != 1 || v.size() < 2) {
    throw Error(Errc::DimensionMismatch, "normalize needs a column vector of dimension >= 2");
  }
  const Scalar n = v.norm();
  if (!(n >= kZeroNormTol)) {
    throw Error(Errc::ZeroVector, "norm below 1e-12");
  }
  return UnitVector::trusted(Vector(v / n));
}

/// Inner product of two unit vectors clamped to [-1, 1].
Scalar cos_sim(const UnitVector& u, const UnitVector& v);

/// Normalizes every column in place. Throws ZeroVector on a degenerate column.
void normalize_columns(MatrixRef m);

/// Upper bounds of the between-class (a1) and within-class (a2) angular
/// margins, derived from the 2D extreme configuration where every class
/// collapses to a point: a1_max = 1 - cos(2 pi / C), a2_max = 1 - cos(2 pi Lc / L).
struct MarginBounds {
  Scalar a1_max = 0;
  Scalar a2_max = 0;
};

MarginBounds margin_upper_bounds(std::size_t num_classes, std::size_t class_size,
                                 std::size_t total_size);

}  // namespace clmle
