#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "relpose/camera.hpp"

namespace relpose {

inline constexpr std::size_t kRansacSampleSize = 4;

// floor(log(1 - confidence) / log(1 - inlier_ratio^sample_size)): the index
// of the last trial the adaptive loop runs, so the loop performs
// ceil(log(1 - confidence) / log(1 - inlier_ratio^sample_size)) trials for
// non-integral bounds. 0 for inlier_ratio 1; SIZE_MAX for inlier_ratio 0.
std::size_t adaptive_iteration_bound(double inlier_ratio, double confidence,
                                     std::size_t sample_size = kRansacSampleSize);

struct RansacOptions {
  double inlier_px = 8.0;
  double confidence = 0.999;
  std::size_t max_iters = 1000;
  std::uint64_t seed = 0;
};

struct RansacResult {
  Pose pose;
  std::vector<bool> inliers;
  std::size_t inlier_count = 0;
  std::size_t trials = 0;
  double inlier_residual_sum = 0.0;  // sum of squared inlier residuals
};

// P3P-RANSAC over samples of four correspondences: three feed the minimal
// solver and the fourth selects among its candidates. The best model has
// the most inliers, ties broken by the smaller inlier residual sum.
// Sampling uses a seeded mt19937_64 with rejection sampling, so results are
// bitwise reproducible for a given seed. Throws NoPoseError with fewer than
// four correspondences or when no model reaches four inliers.
RansacResult ransac_pose(std::span<const Correspondence2D3D> correspondences,
                         const CameraIntrinsics& intrinsics, const RansacOptions& options = {});

}  // namespace relpose
