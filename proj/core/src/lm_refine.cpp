#include "relpose/lm_refine.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "relpose/errors.hpp"

namespace relpose {

double reprojection_cost(const Pose& pose, std::span<const Correspondence2D3D> points,
                         const CameraIntrinsics& intrinsics) {
  double cost = 0.0;
  for (const auto& c : points) {
    const double r = reprojection_residual(pose, c, intrinsics);
    cost += r * r;
  }
  return cost;
}

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Pose apply_increment(const Pose& pose, const Eigen::Matrix<double, 6, 1>& delta) {
  const Eigen::Vector3d w = delta.head<3>();
  const double angle = w.norm();
  const Eigen::Quaterniond dq =
      angle > 0.0 ? Eigen::Quaterniond(Eigen::AngleAxisd(angle, w / angle))
                  : Eigen::Quaterniond::Identity();
  return {dq * pose.rotation(), pose.translation() + delta.tail<3>()};
}

}  // namespace

LmResult lm_refine_detailed(const Pose& initial, std::span<const Correspondence2D3D> inliers,
                            const CameraIntrinsics& intrinsics, const LmOptions& options) {
  if (inliers.size() < 4) throw ContractError("LM refinement needs at least 4 inliers");
  LmResult result;
  result.pose = initial;
  double cost = reprojection_cost(initial, inliers, intrinsics);
  result.initial_cost = cost;
  double lambda = options.initial_damping;

  for (std::size_t it = 0; it < options.max_iters && std::isfinite(cost); ++it) {
    result.iterations = it + 1;
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
    const Eigen::Matrix3d r = result.pose.rotation_matrix();
    for (const auto& c : inliers) {
      const Eigen::Vector3d rx = r * c.world_point;
      const Eigen::Vector3d x = rx + result.pose.translation();
      const double iz = 1.0 / x.z();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << intrinsics.fx * iz, 0.0, -intrinsics.fx * x.x() * iz * iz, 0.0,
          intrinsics.fy * iz, -intrinsics.fy * x.y() * iz * iz;
      Eigen::Matrix<double, 2, 6> j;
      j.leftCols<3>() = -dproj * skew(rx);
      j.rightCols<3>() = dproj;
      const Eigen::Vector2d res = project(x, intrinsics) - c.image_point;
      jtj += j.transpose() * j;
      jtr += j.transpose() * res;
    }
    bool accepted = false;
    double step_norm = 0.0;
    // Retry with growing damping until a step lowers the cost.
    for (int attempt = 0; attempt < 20 && !accepted; ++attempt) {
      Eigen::Matrix<double, 6, 6> a = jtj;
      for (int d = 0; d < 6; ++d) a(d, d) += lambda * std::max(jtj(d, d), 1e-12);
      const Eigen::Matrix<double, 6, 1> delta = -a.ldlt().solve(jtr);
      step_norm = delta.norm();
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Pose candidate = apply_increment(result.pose, delta);
      const double candidate_cost = reprojection_cost(candidate, inliers, intrinsics);
      if (candidate_cost < cost) {
        result.pose = candidate;
        cost = candidate_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        ++result.accepted_steps;
      } else {
        lambda *= 10.0;
      }
      if (step_norm < options.min_step) break;
    }
    if (!accepted || step_norm < options.min_step) break;
  }
  result.final_cost = cost;
  return result;
}

Pose lm_refine(const Pose& initial, std::span<const Correspondence2D3D> inliers,
               const CameraIntrinsics& intrinsics, std::size_t max_iters) {
  LmOptions options;
  options.max_iters = max_iters;
  return lm_refine_detailed(initial, inliers, intrinsics, options).pose;
}

}  // namespace relpose
