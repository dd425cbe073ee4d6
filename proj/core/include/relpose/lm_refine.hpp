#pragma once

#include <cstddef>
#include <span>

#include "relpose/camera.hpp"

namespace relpose {

struct LmOptions {
  std::size_t max_iters = 50;
  double initial_damping = 1e-3;
  double min_step = 1e-10;
};

struct LmResult {
  Pose pose;
  double initial_cost = 0.0;  // sum of squared pixel residuals
  double final_cost = 0.0;
  std::size_t iterations = 0;
  std::size_t accepted_steps = 0;
};

// Levenberg-Marquardt on the reprojection error. Rotation steps are
// left-multiplied axis-angle increments, translation steps additive.
// Damping grows tenfold on rejected steps and shrinks tenfold on accepted
// ones. The returned cost never exceeds the initial cost. Throws
// ContractError with fewer than four correspondences.
LmResult lm_refine_detailed(const Pose& initial, std::span<const Correspondence2D3D> inliers,
                            const CameraIntrinsics& intrinsics, const LmOptions& options = {});
Pose lm_refine(const Pose& initial, std::span<const Correspondence2D3D> inliers,
               const CameraIntrinsics& intrinsics, std::size_t max_iters = 50);

double reprojection_cost(const Pose& pose, std::span<const Correspondence2D3D> points,
                         const CameraIntrinsics& intrinsics);

}  // namespace relpose
