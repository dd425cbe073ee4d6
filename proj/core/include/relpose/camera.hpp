#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "relpose/tensor.hpp"

namespace relpose {

/// Pinhole intrinsics. Pixel coordinates are (x, y) with x along the first
/// image axis: x = fx * X / Z + cx, y = fy * Y / Z + cy.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  // Throws RangeError unless fx, fy > 0.
  void validate() const;
  Eigen::Matrix3d matrix() const;
  // C^-1 [x, y, 1]
  Eigen::Vector3d unproject(const Eigen::Vector2d& px) const;

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

/// Rigid transform X -> R X + t with a canonical unit quaternion (w >= 0).
class Pose {
 public:
  Pose() = default;
  Pose(const Eigen::Quaterniond& q, const Eigen::Vector3d& t);
  Pose(const Eigen::Matrix3d& r, const Eigen::Vector3d& t);
  static Pose identity() { return {}; }

  const Eigen::Quaterniond& rotation() const { return q_; }
  Eigen::Matrix3d rotation_matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Vector3d& translation() const { return t_; }

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return q_ * x + t_; }
  Pose inverse() const;
  // (a * b).apply(x) == a.apply(b.apply(x))
  friend Pose operator*(const Pose& a, const Pose& b);
  friend bool operator==(const Pose& a, const Pose& b) {
    return a.q_.coeffs() == b.q_.coeffs() && a.t_ == b.t_;
  }

 private:
  Eigen::Quaterniond q_ = Eigen::Quaterniond::Identity();
  Eigen::Vector3d t_ = Eigen::Vector3d::Zero();
};

// Pose mapping reference-camera coordinates to query-camera coordinates
// for camera-from-world global poses: query * reference^-1.
Pose relative_pose(const Pose& query_global, const Pose& reference_global);

struct PoseError {
  double rotation_deg = 0.0;
  double translation_m = 0.0;
};

// Angle of R_est R_gt^T in degrees and ||t_est - t_gt||.
PoseError pose_error(const Pose& estimate, const Pose& truth);
double rotation_angle_deg(const Pose& pose);

/// Along-ray Euclidean distances per pixel, values [H_px, W_px]. Entries
/// that are not positive and finite are invalid.
struct DepthMap {
  Tensor values{Shape{0, 0}};

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
  bool valid(std::size_t x, std::size_t y) const;
  bool in_bounds(const Eigen::Vector2d& px) const;
};

/// Ray distance at a continuous pixel and its derivative w.r.t. the pixel.
struct DepthSample {
  double distance = 0.0;
  Eigen::Vector2d gradient = Eigen::Vector2d::Zero();
};

// Interpolates inverse z-depth bilinearly between the four neighbouring
// pixels, which is exact on planar surfaces, and converts back to ray
// distance. Falls back to the nearest pixel across depth discontinuities
// or invalid neighbours. Empty when out of bounds or without valid depth.
std::optional<DepthSample> sample_depth(const DepthMap& depth,
                                        const CameraIntrinsics& intrinsics,
                                        const Eigen::Vector2d& px);

// unit(C^-1 [x, y, 1]) * depth. Throws DepthError unless depth > 0.
Eigen::Vector3d backproject(const Eigen::Vector2d& px, double depth,
                            const CameraIntrinsics& intrinsics);
// Throws BehindCameraError when z <= 0.
Eigen::Vector2d project(const Eigen::Vector3d& x, const CameraIntrinsics& intrinsics);
Eigen::Vector2d reproject(const Eigen::Vector2d& ref_px, double ref_depth,
                          const Pose& relative, const CameraIntrinsics& intrinsics);

enum class Visibility { kVisible, kOccluded, kOutOfView };

inline constexpr double kDefaultOcclusionMargin = 0.05;

// Occluded iff the query map's z-depth at the nearest pixel to the
// reprojection is smaller than the point's query-frame z by more than
// `margin`. Pixels without valid query depth count as visible.
Visibility occlusion_check(const Eigen::Vector2d& ref_px, double ref_depth,
                           const Pose& relative, const CameraIntrinsics& intrinsics,
                           const DepthMap& query_depth,
                           double margin = kDefaultOcclusionMargin);

/// Query pixel observed for a 3D point given in the reference frame.
struct Correspondence2D3D {
  Eigen::Vector2d image_point = Eigen::Vector2d::Zero();
  Eigen::Vector3d world_point = Eigen::Vector3d::Zero();
  double weight = 1.0;
};

// Reprojection residual in pixels; infinity when the point lies behind
// the camera.
double reprojection_residual(const Pose& pose, const Correspondence2D3D& c,
                             const CameraIntrinsics& intrinsics);

// "DMAP" layout: magic, u32 version (=1), u32 H_px, W_px, then row-major
// little-endian f32 ray distances, negative for invalid pixels.
void write_depth_map(std::ostream& out, const DepthMap& depth);
DepthMap read_depth_map(std::istream& in);
void save_depth_map(const std::filesystem::path& path, const DepthMap& depth);
DepthMap load_depth_map(const std::filesystem::path& path);

}  // namespace relpose
