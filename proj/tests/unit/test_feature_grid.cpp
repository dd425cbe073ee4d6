#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "relpose/errors.hpp"
#include "relpose/feature_grid.hpp"
#include "support/testing.hpp"

namespace relpose {
namespace {

FeatureGrid random_grid(testing::Gen& g, std::size_t h, std::size_t w, std::size_t dim = 16) {
  return normalize_grid(g.tensor({h, w, kKeypointChannels}, -3, 3), g.tensor({h, w, dim}));
}

TEST(FeatureGrid, UniformLogitsGiveUniformKeypointMap) {
  const FeatureGrid grid =
      normalize_grid(Tensor(Shape{2, 3, kKeypointChannels}, 0.0), Tensor(Shape{2, 3, 4}, 1.0));
  EXPECT_EQ(grid.image_h, 16u);
  EXPECT_EQ(grid.image_w, 24u);
  for (double p : grid.keypoints.storage()) EXPECT_NEAR(p, 1.0 / 65.0, 1e-15);
  for (double c : keypoint_confidence(grid).storage()) EXPECT_NEAR(c, 64.0 / 65.0, 1e-15);
}

TEST(FeatureGrid, DustbinLogitTenGivesLowConfidence) {
  Tensor logits(Shape{1, 1, kKeypointChannels}, 0.0);
  logits[kNoKeypoint] = 10.0;
  const FeatureGrid grid = normalize_grid(logits, Tensor(Shape{1, 1, 2}, 1.0));
  const double e10 = std::exp(10.0);
  EXPECT_NEAR(keypoint_confidence(grid)[0], 1.0 - e10 / (64.0 + e10), 1e-14);
  EXPECT_NEAR(keypoint_confidence(grid)[0], 0.00290, 1e-5);
}

TEST(FeatureGrid, DescriptorsAreUnitNormalized) {
  Tensor d(Shape{1, 1, 4}, {3, 4, 0, 0});
  const FeatureGrid grid = normalize_grid(Tensor(Shape{1, 1, kKeypointChannels}), d);
  EXPECT_NEAR(grid.descriptors[0], 0.6, 1e-15);
  EXPECT_NEAR(grid.descriptors[1], 0.8, 1e-15);
  testing::Gen g(1);
  const FeatureGrid r = random_grid(g, 3, 4, 32);
  for (std::size_t c = 0; c < 12; ++c) {
    double n = 0.0;
    for (std::size_t k = 0; k < 32; ++k) n += std::pow(r.descriptors[c * 32 + k], 2);
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

TEST(FeatureGrid, RejectsZeroDescriptorsAndBadShapes) {
  EXPECT_THROW(normalize_grid(Tensor(Shape{1, 1, kKeypointChannels}), Tensor(Shape{1, 1, 4}, 0.0)),
               DegenerateDescriptorError);
  EXPECT_THROW(normalize_grid(Tensor(Shape{1, 1, 64}), Tensor(Shape{1, 1, 4}, 1.0)), ShapeError);
  EXPECT_THROW(normalize_grid(Tensor(Shape{1, 2, kKeypointChannels}), Tensor(Shape{1, 1, 4}, 1.0)),
               ShapeError);
}

TEST(FeatureGrid, SoftargmaxExamples) {
  Tensor logits(Shape{3, 4, kKeypointChannels}, 0.0);
  // One-hot sub-cell 0 at cell (2, 3).
  logits.at({2, 3, 0}) = 60.0;
  // Half mass on (m, n) = (1, 2) and half on (3, 6) at cell (0, 1).
  logits.at({0, 1, 10}) = 60.0;
  logits.at({0, 1, 30}) = 60.0;
  // The dustbin is excluded from the expectation.
  logits.at({1, 1, kNoKeypoint}) = 60.0;
  const FeatureGrid grid = normalize_grid(logits, Tensor(Shape{3, 4, 2}, 1.0));
  const Tensor kp = softargmax_cell_coords(grid);
  EXPECT_NEAR(kp.at({2, 3, 0}), 16.0, 1e-9);
  EXPECT_NEAR(kp.at({2, 3, 1}), 24.0, 1e-9);
  EXPECT_NEAR(kp.at({0, 1, 0}), 0.0 + 2.0, 1e-9);
  EXPECT_NEAR(kp.at({0, 1, 1}), 8.0 + 4.0, 1e-9);
  EXPECT_NEAR(kp.at({1, 1, 0}), 8.0 + 3.5, 1e-9);
  EXPECT_NEAR(kp.at({1, 1, 1}), 8.0 + 3.5, 1e-9);
  EXPECT_NEAR(kp.at({0, 0, 0}), 3.5, 1e-12);
}

TEST(FeatureGrid, SoftargmaxStaysInsideItsCell) {
  testing::Gen g(17);
  const FeatureGrid grid = random_grid(g, 4, 5);
  const Tensor kp = softargmax_cell_coords(grid);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_GE(kp.at({i, j, 0}), 8.0 * i);
      EXPECT_LE(kp.at({i, j, 0}), 8.0 * i + 7.0);
      EXPECT_GE(kp.at({i, j, 1}), 8.0 * j);
      EXPECT_LE(kp.at({i, j, 1}), 8.0 * j + 7.0);
    }
}

TEST(FeatureGrid, TapeVersionsAgreeWithPlainVersions) {
  testing::Gen g(23);
  const Tensor logits = g.tensor({2, 3, kKeypointChannels}, -2, 2);
  const Tensor desc = g.tensor({2, 3, 8});
  const FeatureGrid plain = normalize_grid(logits, desc);
  Tape tape;
  const GridVars vars = normalize_grid(tape.leaf(logits), tape.leaf(desc));
  for (std::size_t k = 0; k < plain.keypoints.size(); ++k)
    EXPECT_NEAR(vars.keypoints.value()[k], plain.keypoints[k], 1e-15);
  for (std::size_t k = 0; k < plain.descriptors.size(); ++k)
    EXPECT_NEAR(vars.descriptors.value()[k], plain.descriptors[k], 1e-15);
  const Tensor kp = softargmax_cell_coords(vars.logits).value();
  const Tensor want = softargmax_cell_coords(plain);
  for (std::size_t k = 0; k < kp.size(); ++k) EXPECT_NEAR(kp[k], want[k], 1e-12);
}

TEST(FeatureGrid, GradientsThroughNormalizationAndSoftargmax) {
  testing::Gen g(29);
  EXPECT_LT(testing::max_grad_error(
                [](Tape&, const std::vector<Var>& v) { return softargmax_cell_coords(v[0]); },
                {g.tensor({2, 2, kKeypointChannels}, -2, 2)}),
            1e-7);
  EXPECT_LT(testing::max_grad_error(
                [](Tape&, const std::vector<Var>& v) { return l2_normalize_last(v[0]); },
                {g.tensor({2, 2, 5})}),
            1e-7);
  EXPECT_LT(testing::max_grad_error(
                [](Tape&, const std::vector<Var>& v) {
                  return keypoint_confidence(apply_keypoint_head(v[0], v[1], v[2]));
                },
                {g.tensor({2, 1, kKeypointChannels}), g.tensor({kKeypointChannels}, 0.5, 1.5),
                 g.tensor({kKeypointChannels})}),
            1e-7);
}

TEST(FeatureGrid, IdentityHeadLeavesTheGridUnchanged) {
  testing::Gen g(31);
  const FeatureGrid grid = random_grid(g, 2, 2);
  const FeatureGrid same = apply_keypoint_head(grid, KeypointHead{});
  EXPECT_EQ(same.keypoint_logits, grid.keypoint_logits);
  for (std::size_t k = 0; k < grid.keypoints.size(); ++k)
    EXPECT_NEAR(same.keypoints[k], grid.keypoints[k], 1e-15);
}

TEST(FeatureGrid, FileRoundTripIsBitExact) {
  testing::Gen g(37);
  const FeatureGrid grid = random_grid(g, 15, 20, 256);
  EXPECT_EQ(grid.image_h, 120u);
  EXPECT_EQ(grid.image_w, 160u);
  std::stringstream ss;
  write_feature_grid(ss, grid);
  const FeatureGrid back = read_feature_grid(ss);
  EXPECT_EQ(back.keypoint_logits, grid.keypoint_logits);
  EXPECT_EQ(back.descriptors_raw, grid.descriptors_raw);
  EXPECT_EQ(back.keypoints, grid.keypoints);
  EXPECT_EQ(back.descriptors, grid.descriptors);
}

TEST(FeatureGrid, TruncatedFileIsAFormatError) {
  testing::Gen g(41);
  std::stringstream ss;
  write_feature_grid(ss, random_grid(g, 2, 2));
  std::string bytes = ss.str();
  bytes.resize(bytes.size() / 2);
  std::stringstream cut(bytes);
  EXPECT_THROW(read_feature_grid(cut), FormatError);
}

}  // namespace
}  // namespace relpose
