#include "relpose/camera.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "relpose/errors.hpp"
#include "relpose/tensor_io.hpp"

namespace relpose {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw RangeError("focal lengths must be positive");
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

Eigen::Vector3d CameraIntrinsics::unproject(const Eigen::Vector2d& px) const {
  return {(px.x() - cx) / fx, (px.y() - cy) / fy, 1.0};
}

namespace {

Eigen::Quaterniond canonical(Eigen::Quaterniond q) {
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

}  // namespace

Pose::Pose(const Eigen::Quaterniond& q, const Eigen::Vector3d& t)
    : q_(canonical(q)), t_(t) {}

Pose::Pose(const Eigen::Matrix3d& r, const Eigen::Vector3d& t)
    : q_(canonical(Eigen::Quaterniond(r))), t_(t) {}

Pose Pose::inverse() const {
  const Eigen::Quaterniond qi = q_.conjugate();
  return {qi, -(qi * t_)};
}

Pose operator*(const Pose& a, const Pose& b) {
  return {a.q_ * b.q_, a.q_ * b.t_ + a.t_};
}

Pose relative_pose(const Pose& query_global, const Pose& reference_global) {
  return query_global * reference_global.inverse();
}

double rotation_angle_deg(const Pose& pose) {
  const Eigen::Quaterniond& q = pose.rotation();
  // atan2 form stays accurate near 0 and 180 degrees.
  const double angle = 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
  return angle * 180.0 / std::numbers::pi;
}

PoseError pose_error(const Pose& estimate, const Pose& truth) {
  const Pose delta(estimate.rotation() * truth.rotation().conjugate(), Eigen::Vector3d::Zero());
  return {rotation_angle_deg(delta), (estimate.translation() - truth.translation()).norm()};
}

bool DepthMap::valid(std::size_t x, std::size_t y) const {
  const double v = values[x * width() + y];
  return std::isfinite(v) && v > 0.0;
}

bool DepthMap::in_bounds(const Eigen::Vector2d& px) const {
  return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= static_cast<double>(height()) - 1.0 &&
         px.y() <= static_cast<double>(width()) - 1.0;
}

namespace {

// Relative z spread above which four neighbours are treated as straddling
// a depth discontinuity.
constexpr double kDiscontinuity = 0.1;

}  // namespace

std::optional<DepthSample> sample_depth(const DepthMap& depth,
                                        const CameraIntrinsics& intrinsics,
                                        const Eigen::Vector2d& px) {
  if (depth.height() == 0 || depth.width() == 0 || !depth.in_bounds(px)) return std::nullopt;
  // Ray distance = z * ||C^-1 p||; its pixel gradient has a z part and a
  // ray-length part.
  const Eigen::Vector3d ray = intrinsics.unproject(px);
  const double len = ray.norm();
  const Eigen::Vector2d dlen{ray.x() / (len * intrinsics.fx), ray.y() / (len * intrinsics.fy)};
  auto z_at = [&](std::size_t x, std::size_t y) {
    const Eigen::Vector2d p{static_cast<double>(x), static_cast<double>(y)};
    return depth.values[x * depth.width() + y] / intrinsics.unproject(p).norm();
  };

  const std::size_t x0 = static_cast<std::size_t>(std::floor(px.x()));
  const std::size_t y0 = static_cast<std::size_t>(std::floor(px.y()));
  const std::size_t x1 = std::min(x0 + 1, depth.height() - 1);
  const std::size_t y1 = std::min(y0 + 1, depth.width() - 1);
  const double fx = px.x() - static_cast<double>(x0);
  const double fy = px.y() - static_cast<double>(y0);

  const bool all_valid =
      depth.valid(x0, y0) && depth.valid(x0, y1) && depth.valid(x1, y0) && depth.valid(x1, y1);
  if (all_valid) {
    const double z00 = z_at(x0, y0), z01 = z_at(x0, y1), z10 = z_at(x1, y0), z11 = z_at(x1, y1);
    const double zmin = std::min({z00, z01, z10, z11});
    const double zmax = std::max({z00, z01, z10, z11});
    if (zmax <= zmin * (1.0 + kDiscontinuity)) {
      const double w00 = 1.0 / z00, w01 = 1.0 / z01, w10 = 1.0 / z10, w11 = 1.0 / z11;
      const double inv = (1 - fx) * (1 - fy) * w00 + (1 - fx) * fy * w01 +
                         fx * (1 - fy) * w10 + fx * fy * w11;
      const double dinv_dx = (1 - fy) * (w10 - w00) + fy * (w11 - w01);
      const double dinv_dy = (1 - fx) * (w01 - w00) + fx * (w11 - w10);
      const double z = 1.0 / inv;
      const Eigen::Vector2d dz{-z * z * dinv_dx, -z * z * dinv_dy};
      return DepthSample{z * len, dz * len + z * dlen};
    }
  }
  const std::size_t xn = fx < 0.5 ? x0 : x1;
  const std::size_t yn = fy < 0.5 ? y0 : y1;
  if (!depth.valid(xn, yn)) return std::nullopt;
  const double z = z_at(xn, yn);
  return DepthSample{z * len, z * dlen};
}

Eigen::Vector3d backproject(const Eigen::Vector2d& px, double depth,
                            const CameraIntrinsics& intrinsics) {
  if (!(depth > 0.0) || !std::isfinite(depth)) throw DepthError("depth must be positive");
  return intrinsics.unproject(px).normalized() * depth;
}

Eigen::Vector2d project(const Eigen::Vector3d& x, const CameraIntrinsics& intrinsics) {
  if (!(x.z() > 0.0)) throw BehindCameraError("point lies behind the camera");
  return {intrinsics.fx * x.x() / x.z() + intrinsics.cx,
          intrinsics.fy * x.y() / x.z() + intrinsics.cy};
}

Eigen::Vector2d reproject(const Eigen::Vector2d& ref_px, double ref_depth,
                          const Pose& relative, const CameraIntrinsics& intrinsics) {
  return project(relative.apply(backproject(ref_px, ref_depth, intrinsics)), intrinsics);
}

Visibility occlusion_check(const Eigen::Vector2d& ref_px, double ref_depth,
                           const Pose& relative, const CameraIntrinsics& intrinsics,
                           const DepthMap& query_depth, double margin) {
  const Eigen::Vector3d x = relative.apply(backproject(ref_px, ref_depth, intrinsics));
  if (!(x.z() > 0.0)) return Visibility::kOutOfView;
  const Eigen::Vector2d px = project(x, intrinsics);
  const Eigen::Vector2d nearest{std::round(px.x()), std::round(px.y())};
  if (!query_depth.in_bounds(nearest)) return Visibility::kOutOfView;
  const auto xi = static_cast<std::size_t>(nearest.x());
  const auto yi = static_cast<std::size_t>(nearest.y());
  if (!query_depth.valid(xi, yi)) return Visibility::kVisible;
  const double surface_z =
      query_depth.values[xi * query_depth.width() + yi] / intrinsics.unproject(nearest).norm();
  return surface_z < x.z() - margin ? Visibility::kOccluded : Visibility::kVisible;
}

double reprojection_residual(const Pose& pose, const Correspondence2D3D& c,
                             const CameraIntrinsics& intrinsics) {
  const Eigen::Vector3d x = pose.apply(c.world_point);
  if (!(x.z() > 0.0)) return std::numeric_limits<double>::infinity();
  return (project(x, intrinsics) - c.image_point).norm();
}

namespace {
constexpr std::uint32_t kDepthFormatVersion = 1;
}

void write_depth_map(std::ostream& out, const DepthMap& depth) {
  io::write_magic(out, "DMAP");
  io::write_u32(out, kDepthFormatVersion);
  io::write_u32(out, static_cast<std::uint32_t>(depth.height()));
  io::write_u32(out, static_cast<std::uint32_t>(depth.width()));
  for (double v : depth.values.data()) {
    io::write_f32(out, std::isfinite(v) && v > 0.0 ? static_cast<float>(v) : -1.0f);
  }
}

DepthMap read_depth_map(std::istream& in) {
  io::expect_magic(in, "DMAP");
  const std::uint32_t version = io::read_u32(in);
  if (version != kDepthFormatVersion) {
    throw FormatError("unsupported DMAP version " + std::to_string(version));
  }
  const std::size_t h = io::read_u32(in);
  const std::size_t w = io::read_u32(in);
  DepthMap depth{Tensor(Shape{h, w})};
  for (double& v : depth.values.data()) {
    const float f = io::read_f32(in);
    v = f > 0.0f ? static_cast<double>(f) : -1.0;
  }
  return depth;
}

void save_depth_map(const std::filesystem::path& path, const DepthMap& depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_depth_map(out, depth);
}

DepthMap load_depth_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_depth_map(in);
}

}  // namespace relpose
