#include <cmath>
#include <numbers>
#include <random>

#include "clmle/hypersphere.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace clmle;

TEST_CASE("normalize scales to unit norm") {
  const auto u = normalize(Vector{{3.0, 4.0}});
  CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(0.8).epsilon(1e-15));
  const auto e = normalize(Vector{{0.0, 1.0}});
  CHECK(e[0] == 0.0);
  CHECK(e[1] == 1.0);
}

TEST_CASE("normalize rejects degenerate input") {
  try {
    normalize(Vector{{1e-15, 0.0}});
    FAIL("expected ZeroVector");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ZeroVector);
  }
  try {
    normalize(Vector{{1.0}});
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DimensionMismatch);
  }
}

TEST_CASE("normalize is idempotent and unit norm") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 100; ++t) {
    const Vector v = oracle::random_matrix(5, 1, rng, 10.0);
    const auto once = normalize(v);
    const auto twice = normalize(once.vec());
    CHECK(std::abs(once.vec().norm() - 1.0) < 1e-9);
    CHECK((once.vec() - twice.vec()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("cos_sim basic values and clamping") {
  const auto u = normalize(Vector{{1.0, 0.0}});
  const auto v = normalize(Vector{{0.0, 1.0}});
  CHECK(cos_sim(u, u) == 1.0);
  CHECK(cos_sim(u, -u) == -1.0);
  CHECK(cos_sim(u, v) == 0.0);
  const auto w = normalize(Vector{{1.0, 1.0, 0.0}});
  CHECK_THROWS_AS(cos_sim(u, w), Error);
}

TEST_CASE("cos_sim equals 1 - |u - v|^2 / 2") {
  std::mt19937_64 rng(11);
  const auto pts = oracle::random_unit_columns(8, 200, rng);
  for (int j = 0; j + 1 < pts.cols(); ++j) {
    const auto a = UnitVector::trusted(pts.col(j));
    const auto b = UnitVector::trusted(pts.col(j + 1));
    CHECK(std::abs(cos_sim(a, b) - (1.0 - (a.vec() - b.vec()).squaredNorm() / 2)) < 1e-9);
  }
}

TEST_CASE("normalize_columns") {
  Matrix m{{3.0, 0.0}, {4.0, 2.0}};
  normalize_columns(m);
  CHECK(m(0, 0) == doctest::Approx(0.6));
  CHECK(m(1, 1) == 1.0);
  Matrix z = Matrix::Zero(2, 1);
  CHECK_THROWS_AS(normalize_columns(z), Error);
}

TEST_CASE("margin bounds") {
  const auto b2 = margin_upper_bounds(2, 1, 2);
  CHECK(b2.a1_max == 2.0);
  const auto b4 = margin_upper_bounds(4, 1, 4);
  CHECK(b4.a1_max == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(b4.a2_max == doctest::Approx(1.0).epsilon(1e-15));

  CHECK_THROWS_AS(margin_upper_bounds(1, 1, 2), Error);
  CHECK_THROWS_AS(margin_upper_bounds(3, 0, 2), Error);
  CHECK_THROWS_AS(margin_upper_bounds(3, 3, 2), Error);

  SUBCASE("monotone in C and in Lc / L") {
    for (std::size_t c = 2; c < 50; ++c) {
      CHECK(margin_upper_bounds(c + 1, 1, 10).a1_max < margin_upper_bounds(c, 1, 10).a1_max);
    }
    for (std::size_t lc = 1; lc < 50; ++lc) {
      CHECK(margin_upper_bounds(3, lc + 1, 100).a2_max > margin_upper_bounds(3, lc, 100).a2_max);
    }
  }
  SUBCASE("within [0, 2]") {
    for (std::size_t c = 2; c < 20; ++c) {
      for (std::size_t lc = 1; lc <= 20; ++lc) {
        const auto b = margin_upper_bounds(c, lc, 20);
        CHECK(b.a1_max >= 0);
        CHECK(b.a1_max <= 2);
        CHECK(b.a2_max >= 0);
        CHECK(b.a2_max <= 2);
      }
    }
  }
}
