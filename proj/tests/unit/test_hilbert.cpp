#include <gtest/gtest.h>

#include <cstdlib>
#include <set>
#include <sstream>

#include "relpose/errors.hpp"
#include "relpose/hilbert.hpp"
#include "support/testing.hpp"

namespace relpose {
namespace {

void expect_unit_step_bijection(const HilbertMap& map) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t k = 0; k < map.size(); ++k) {
    const Cell c = map.cell(k);
    ASSERT_LT(c.i, map.rows());
    ASSERT_LT(c.j, map.cols());
    ASSERT_EQ(map.index(c.i, c.j), k);
    seen.insert({c.i, c.j});
    if (k > 0) {
      const Cell p = map.cell(k - 1);
      const long di = long(c.i) - long(p.i), dj = long(c.j) - long(p.j);
      ASSERT_EQ(std::abs(di) + std::abs(dj), 1) << map.rows() << "x" << map.cols() << " k=" << k;
    }
  }
  EXPECT_EQ(seen.size(), map.rows() * map.cols());
}

TEST(Hilbert, FourByFourCornerStartsAndEnds) {
  const HilbertMap m = build_pseudo_hilbert(4, 4);
  EXPECT_EQ(m.cell(0), (Cell{0, 0}));
  expect_unit_step_bijection(m);
  // A 4x4 Hilbert curve ends on the corner adjacent to its start along
  // one side.
  const Cell last = m.cell(15);
  EXPECT_TRUE((last == Cell{0, 3}) || (last == Cell{3, 0}));
}

TEST(Hilbert, FifteenByTwentyIsAUnitStepBijection) {
  expect_unit_step_bijection(build_pseudo_hilbert(15, 20));
}

TEST(Hilbert, DegenerateShapes) {
  const HilbertMap line = build_pseudo_hilbert(1, 7);
  for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(line.cell(k), (Cell{0, k}));
  const HilbertMap column = build_pseudo_hilbert(5, 1);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(column.cell(k), (Cell{k, 0}));
  const HilbertMap single = build_pseudo_hilbert(1, 1);
  EXPECT_EQ(single.size(), 1u);
  EXPECT_EQ(locality_score(single), 0.0);
  EXPECT_THROW(build_pseudo_hilbert(0, 3), DimensionError);
  EXPECT_THROW(build_pseudo_hilbert(3, 0), DimensionError);
}

TEST(Hilbert, RandomGridsAreUnitStepBijections) {
  testing::Gen g(101);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t r = g.index(1, 40), c = g.index(1, 40);
    SCOPED_TRACE(std::to_string(r) + "x" + std::to_string(c));
    expect_unit_step_bijection(build_pseudo_hilbert(r, c));
  }
}

TEST(Hilbert, LocalityScoresOnSmallGrids) {
  // 2x2: both orders are a U or Z; hand-count the four neighbour pairs.
  EXPECT_DOUBLE_EQ(locality_score(build_pseudo_hilbert(2, 2)), (1 + 1 + 1 + 3) / 4.0);
  EXPECT_DOUBLE_EQ(row_major_locality_score(2, 2), (1 + 1 + 2 + 2) / 4.0);
  // Row-major on R x C: R(C-1) horizontal pairs at distance 1 and
  // (R-1)C vertical pairs at distance C.
  EXPECT_DOUBLE_EQ(row_major_locality_score(3, 5), (3 * 4 * 1.0 + 2 * 5 * 5.0) / (12 + 10));
}

// Mean index gap over 4-neighbour pairs, counted directly.
template <typename Index>
double brute_force_score(std::size_t rows, std::size_t cols, Index index) {
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const long k = long(index(i, j));
      if (j + 1 < cols) {
        sum += std::abs(k - long(index(i, j + 1)));
        ++pairs;
      }
      if (i + 1 < rows) {
        sum += std::abs(k - long(index(i + 1, j)));
        ++pairs;
      }
    }
  return pairs == 0 ? 0.0 : sum / double(pairs);
}

TEST(Hilbert, LocalityScoreMatchesBruteForce) {
  testing::Gen g(55);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t r = g.index(1, 25), c = g.index(1, 25);
    const HilbertMap m = build_pseudo_hilbert(r, c);
    EXPECT_NEAR(locality_score(m),
                brute_force_score(r, c, [&](std::size_t i, std::size_t j) { return m.index(i, j); }),
                1e-12)
        << r << "x" << c;
    EXPECT_NEAR(row_major_locality_score(r, c),
                brute_force_score(r, c, [&](std::size_t i, std::size_t j) { return i * c + j; }),
                1e-12);
  }
}

TEST(Hilbert, SingleRowScoresEqualRowMajor) {
  EXPECT_EQ(build_pseudo_hilbert(1, 1).index(0, 0), 0u);
  for (std::size_t n : {2u, 5u, 9u}) {
    EXPECT_DOUBLE_EQ(locality_score(build_pseudo_hilbert(1, n)), row_major_locality_score(1, n));
  }
}

TEST(Hilbert, OneHotVolumeLandsOnTheCurveIndex) {
  const HilbertMap m = build_pseudo_hilbert(3, 4);
  Tensor c4(Shape{3, 4, 3, 4}, 0.0);
  c4.at({0, 0, 2, 1}) = 1.0;
  const Tensor c3 = ravel_volume(c4, m);
  for (std::size_t k = 0; k <= 12; ++k) {
    EXPECT_EQ(c3.at({0, 0, k}), k == m.index(2, 1) ? 1.0 : 0.0);
  }
}

TEST(Hilbert, RavelUnravelRoundTrip) {
  testing::Gen g(7);
  for (auto [r, c] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 1}, {3, 5}, {4, 4}}) {
    const HilbertMap m = build_pseudo_hilbert(r, c);
    const Tensor c4 = g.tensor({r, c, r, c});
    const Tensor c3 = ravel_volume(c4, m);
    ASSERT_EQ(c3.shape(), (Shape{r, c, r * c + 1}));
    EXPECT_EQ(unravel_volume(c3, m), c4);
    for (std::size_t q = 0; q < r * c; ++q) EXPECT_EQ(c3[q * (r * c + 1) + r * c], 0.0);
    // Spot-check the documented index relation.
    const Cell ref = m.cell(r * c - 1);
    EXPECT_EQ(c3.at({0, 0, r * c - 1}), c4.at({0, 0, ref.i, ref.j}));
  }
}

TEST(Hilbert, RavelRejectsMismatchedShapes) {
  const HilbertMap m = build_pseudo_hilbert(3, 4);
  EXPECT_THROW(ravel_volume(Tensor(Shape{3, 4, 4, 3}), m), ShapeError);
  EXPECT_THROW(unravel_volume(Tensor(Shape{3, 4, 12}), m), ShapeError);
}

TEST(Hilbert, RavelGradientIsAPermutation) {
  const HilbertMap m = build_pseudo_hilbert(2, 3);
  testing::Gen g(3);
  EXPECT_LT(testing::max_grad_error(
                [&](Tape&, const std::vector<Var>& v) { return ravel_volume(v[0], m); },
                {g.tensor({2, 3, 2, 3})}),
            1e-9);
}

TEST(Hilbert, CsvRoundTripAndValidation) {
  const HilbertMap m = build_pseudo_hilbert(6, 9);
  std::stringstream ss;
  write_curve_csv(ss, m);
  EXPECT_EQ(ss.str().substr(0, 6), "k,i,j\n");
  EXPECT_EQ(read_curve_csv(ss), m);

  std::stringstream jump("k,i,j\n0,0,0\n1,1,1\n2,0,1\n3,1,0\n");
  EXPECT_THROW(read_curve_csv(jump), FormatError);
  std::stringstream header("x,y\n");
  EXPECT_THROW(read_curve_csv(header), FormatError);
}

TEST(Hilbert, FromOrderValidates) {
  EXPECT_THROW(HilbertMap::from_order(1, 2, {{0, 0}, {0, 0}}), DimensionError);
  EXPECT_THROW(HilbertMap::from_order(1, 2, {{0, 0}}), DimensionError);
  EXPECT_NO_THROW(HilbertMap::from_order(1, 2, {{0, 1}, {0, 0}}));
}

}  // namespace
}  // namespace relpose
