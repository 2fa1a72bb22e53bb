#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "advsep/array.hpp"

using namespace advsep;

TEST(Array, ShapeAndIndexing) {
  Array m = Array::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.ndim(), 2u);
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m.at(1, 2), 6.0);
  EXPECT_EQ(m.row(1)[0], 4.0);
  m.at(0, 1) = -1.0;
  EXPECT_EQ(m[1], -1.0);
}

TEST(Array, MismatchedDataThrows) {
  EXPECT_THROW(Array({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Array::matrix(2, 2, {1}), ShapeError);
}

TEST(Array, ExtentOutOfRangeThrows) {
  Array v = Array::vector({1, 2});
  EXPECT_THROW(v.extent(1), ShapeError);
}

TEST(Array, FiniteChecks) {
  Array v = Array::vector({1.0, std::numeric_limits<double>::quiet_NaN()});
  EXPECT_FALSE(v.all_finite());
  EXPECT_THROW(v.require_finite("v"), std::domain_error);
  EXPECT_NO_THROW(Array::vector({0.0, 1.0}).require_finite("w"));
}

TEST(Array, Norms) {
  const std::vector<double> v{3.0, -4.0, 0.0};
  EXPECT_DOUBLE_EQ(norm_l2(v), 5.0);
  EXPECT_DOUBLE_EQ(norm_l1(v), 7.0);
  EXPECT_DOUBLE_EQ(norm_linf(v), 4.0);
  EXPECT_EQ(count_nonzero(v), 2u);
}

TEST(Array, DotMatchesLongDoubleSum) {
  std::vector<double> a(37), b(37);
  long double ref = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = std::sin(0.3 * i);
    b[i] = std::cos(0.7 * i);
    ref += static_cast<long double>(a[i]) * b[i];
  }
  EXPECT_NEAR(dot(a, b), static_cast<double>(ref), 1e-13);
  EXPECT_THROW(dot(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST(Array, Axpy) {
  std::vector<double> dst{1.0, 1.0};
  axpy(2.0, std::vector<double>{1.0, -1.0}, dst);
  EXPECT_EQ(dst[0], 3.0);
  EXPECT_EQ(dst[1], -1.0);
}
