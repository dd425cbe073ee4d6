#include "relpose/ransac.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "relpose/errors.hpp"
#include "relpose/p3p.hpp"
#include "relpose/random.hpp"

namespace relpose {

std::size_t adaptive_iteration_bound(double inlier_ratio, double confidence,
                                     std::size_t sample_size) {
  if (!(confidence > 0.0 && confidence < 1.0)) throw RangeError("confidence must lie in (0, 1)");
  if (!(inlier_ratio >= 0.0 && inlier_ratio <= 1.0)) {
    throw RangeError("inlier ratio must lie in [0, 1]");
  }
  const double all_inliers = std::pow(inlier_ratio, static_cast<double>(sample_size));
  if (all_inliers >= 1.0) return 0;
  if (all_inliers <= 0.0) return std::numeric_limits<std::size_t>::max();
  const double bound = std::log(1.0 - confidence) / std::log1p(-all_inliers);
  if (!(bound < 1e18)) return std::numeric_limits<std::size_t>::max();
  return static_cast<std::size_t>(std::floor(bound));
}

RansacResult ransac_pose(std::span<const Correspondence2D3D> correspondences,
                         const CameraIntrinsics& intrinsics, const RansacOptions& options) {
  const std::size_t n = correspondences.size();
  if (n < kRansacSampleSize) {
    throw NoPoseError("RANSAC needs at least 4 correspondences, got " + std::to_string(n));
  }
  Random rng(options.seed);
  RansacResult best;
  std::size_t bound = std::numeric_limits<std::size_t>::max();
  std::size_t trial = 0;
  std::vector<bool> mask(n);
  for (; trial < options.max_iters && trial <= bound; ++trial) {
    std::array<std::size_t, kRansacSampleSize> sample{};
    for (std::size_t k = 0; k < kRansacSampleSize; ++k) {
      bool fresh;
      do {
        sample[k] = rng.index(n);
        fresh = true;
        for (std::size_t m = 0; m < k; ++m) fresh = fresh && sample[m] != sample[k];
      } while (!fresh);
    }
    std::vector<Pose> candidates;
    try {
      candidates = p3p_solve(correspondences[sample[0]], correspondences[sample[1]],
                             correspondences[sample[2]], intrinsics);
    } catch (const DegenerateSampleError&) {
      continue;
    } catch (const EmptySolution&) {
      continue;
    }
    const Correspondence2D3D& check = correspondences[sample[3]];
    const Pose* chosen = nullptr;
    double chosen_residual = std::numeric_limits<double>::infinity();
    for (const Pose& p : candidates) {
      const double r = reprojection_residual(p, check, intrinsics);
      if (r <= options.inlier_px && r < chosen_residual) {
        chosen = &p;
        chosen_residual = r;
      }
    }
    if (!chosen) continue;

    std::size_t count = 0;
    double residual_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double r = reprojection_residual(*chosen, correspondences[k], intrinsics);
      mask[k] = r <= options.inlier_px;
      if (mask[k]) {
        ++count;
        residual_sum += r * r;
      }
    }
    const bool better = count > best.inlier_count ||
                        (count == best.inlier_count && count > 0 &&
                         residual_sum < best.inlier_residual_sum);
    if (!better) continue;
    best.pose = *chosen;
    best.inliers = mask;
    best.inlier_count = count;
    best.inlier_residual_sum = residual_sum;
    bound = adaptive_iteration_bound(static_cast<double>(count) / static_cast<double>(n),
                                     options.confidence);
  }
  best.trials = trial;
  if (best.inlier_count < kRansacSampleSize) {
    throw NoPoseError("no pose hypothesis reached 4 inliers");
  }
  return best;
}

}  // namespace relpose
