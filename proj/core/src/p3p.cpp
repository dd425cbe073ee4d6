#include "relpose/p3p.hpp"

#include <array>
#include <cmath>
#include <complex>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "relpose/errors.hpp"

namespace relpose {
namespace {

using Poly = std::vector<double>;  // coefficients, lowest degree first

Poly multiply(const Poly& a, const Poly& b) {
  Poly out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

Poly combine(double sa, const Poly& a, double sb, const Poly& b) {
  Poly out(std::max(a.size(), b.size()), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += sa * a[i];
  for (std::size_t i = 0; i < b.size(); ++i) out[i] += sb * b[i];
  return out;
}

double evaluate(const Poly& p, double x) {
  double v = 0.0;
  for (std::size_t i = p.size(); i-- > 0;) v = v * x + p[i];
  return v;
}

double derivative(const Poly& p, double x) {
  double v = 0.0;
  for (std::size_t i = p.size(); i-- > 1;) v = v * x + static_cast<double>(i) * p[i];
  return v;
}

// Real roots through the companion matrix, polished by Newton steps.
std::vector<double> real_roots(Poly p) {
  double scale = 0.0;
  for (double c : p) scale = std::max(scale, std::abs(c));
  if (scale == 0.0) return {};
  while (p.size() > 1 && std::abs(p.back()) < 1e-14 * scale) p.pop_back();
  const std::size_t degree = p.size() - 1;
  if (degree == 0) return {};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (std::size_t i = 0; i < degree; ++i) companion(0, i) = -p[degree - 1 - i] / p[degree];
  for (std::size_t i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  std::vector<double> roots;
  for (const std::complex<double>& z : solver.eigenvalues()) {
    // Double roots split into pairs with imaginary parts near sqrt(eps);
    // the tolerance admits them and the caller rejects spurious candidates.
    if (std::abs(z.imag()) > 1e-4 * std::max(1.0, std::abs(z))) continue;
    double x = z.real();
    double residual = std::abs(evaluate(p, x));
    for (int it = 0; it < 8; ++it) {
      const double d = derivative(p, x);
      if (d == 0.0) break;
      const double next = x - evaluate(p, x) / d;
      const double next_residual = std::abs(evaluate(p, next));
      // Near a double root the derivative vanishes and a full step can
      // leave the basin; keep only improving steps.
      if (!(next_residual < residual)) break;
      const bool converged = std::abs(next - x) < 1e-15 * std::max(1.0, std::abs(x));
      x = next;
      residual = next_residual;
      if (converged) break;
    }
    roots.push_back(x);
  }
  return roots;
}

// Newton refinement of the three ray distances against the law-of-cosines
// system.
Eigen::Vector3d polish_distances(Eigen::Vector3d s, const std::array<double, 3>& cosines,
                                 const std::array<double, 3>& sq) {
  // Pairs (1,2), (0,2), (0,1) with cosines cos_a, cos_b, cos_c.
  constexpr int kPairs[3][2] = {{1, 2}, {0, 2}, {0, 1}};
  for (int it = 0; it < 6; ++it) {
    Eigen::Vector3d r;
    Eigen::Matrix3d j = Eigen::Matrix3d::Zero();
    for (int e = 0; e < 3; ++e) {
      const int p = kPairs[e][0], q = kPairs[e][1];
      r(e) = s(p) * s(p) + s(q) * s(q) - 2.0 * s(p) * s(q) * cosines[e] - sq[e];
      j(e, p) = 2.0 * s(p) - 2.0 * s(q) * cosines[e];
      j(e, q) = 2.0 * s(q) - 2.0 * s(p) * cosines[e];
    }
    const Eigen::Vector3d step = j.fullPivLu().solve(r);
    if (!step.allFinite()) break;
    s -= step;
    if (step.norm() < 1e-15 * s.norm()) break;
  }
  return s;
}

}  // namespace

std::vector<Pose> p3p_solve(const Correspondence2D3D& c1, const Correspondence2D3D& c2,
                            const Correspondence2D3D& c3,
                            const CameraIntrinsics& intrinsics) {
  const std::array<Eigen::Vector3d, 3> world{c1.world_point, c2.world_point, c3.world_point};
  const std::array<Eigen::Vector3d, 3> f{intrinsics.unproject(c1.image_point).normalized(),
                                         intrinsics.unproject(c2.image_point).normalized(),
                                         intrinsics.unproject(c3.image_point).normalized()};
  const double a = (world[1] - world[2]).norm();
  const double b = (world[0] - world[2]).norm();
  const double c = (world[0] - world[1]).norm();
  const double extent = std::max({a, b, c});
  const double area2 = (world[1] - world[0]).cross(world[2] - world[0]).norm();
  if (extent == 0.0 || area2 <= 1e-10 * extent * extent) {
    throw DegenerateSampleError("P3P world points are collinear");
  }
  if (f[0].cross(f[1]).norm() < 1e-12 || f[0].cross(f[2]).norm() < 1e-12 ||
      f[1].cross(f[2]).norm() < 1e-12) {
    throw DegenerateSampleError("P3P bearings coincide");
  }
  const double ca = f[1].dot(f[2]);
  const double cb = f[0].dot(f[2]);
  const double cg = f[0].dot(f[1]);
  const double aa = a * a, bb = b * b, cc = c * c;

  // With s2 = u s1 and s3 = v s1, u = N(v) / Dn(v) and v solves
  // b^2 (Dn^2 + N^2 - 2 cos_g N Dn) - c^2 (1 + v^2 - 2 v cos_b) Dn^2 = 0.
  const Poly q{1.0, -2.0 * cb, 1.0};  // 1 + v^2 - 2 v cos_b
  const Poly n = combine(aa - cc, q, -bb, Poly{-1.0, 0.0, 1.0});
  const Poly dn{2.0 * bb * cg, -2.0 * bb * ca};
  const Poly dn2 = multiply(dn, dn);
  Poly lhs = combine(bb, combine(1.0, dn2, 1.0, multiply(n, n)), -2.0 * bb * cg,
                     multiply(n, dn));
  const Poly quartic = combine(1.0, lhs, -cc, multiply(q, dn2));

  std::vector<Pose> poses;
  auto add_candidate = [&](const Eigen::Vector3d& s) {
    if (!(s.minCoeff() > 0.0) || !s.allFinite()) return;
    Eigen::Matrix3d src, dst;
    for (int k = 0; k < 3; ++k) {
      src.col(k) = world[k];
      dst.col(k) = s(k) * f[k];
    }
    const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
    const Pose pose(Eigen::Matrix3d(t.topLeftCorner<3, 3>()), Eigen::Vector3d(t.topRightCorner<3, 1>()));

    // Spurious roots from the elimination do not satisfy the original
    // system; keep only candidates that reproject all three points.
    for (const auto* corr : {&c1, &c2, &c3}) {
      if (reprojection_residual(pose, *corr, intrinsics) > 1e-4) return;
    }
    for (const Pose& p : poses) {
      const PoseError e = pose_error(p, pose);
      if (e.rotation_deg < 1e-6 && e.translation_m < 1e-8 * extent) return;
    }
    poses.push_back(pose);
  };
  for (double v : real_roots(quartic)) {
    if (!(v > 0.0)) continue;
    const double qv = evaluate(q, v);
    if (!(qv > 0.0)) continue;
    const double s1 = b / std::sqrt(qv);
    const double d = evaluate(dn, v);
    if (std::abs(d) > 1e-8 * bb) {
      const double u = evaluate(n, v) / d;
      if (u > 0.0) add_candidate(polish_distances({s1, u * s1, v * s1}, {ca, cb, cg}, {aa, bb, cc}));
      continue;
    }
    // Symmetric configurations make u = N / Dn indeterminate; take s2 from
    // the (0,1) triangle directly and let the reprojection test decide.
    double disc = cc - s1 * s1 * (1.0 - cg * cg);
    if (disc < 0.0 && disc > -1e-9 * cc) disc = 0.0;
    if (disc < 0.0) continue;
    for (double sign : {1.0, -1.0}) {
      const double s2 = s1 * cg + sign * std::sqrt(disc);
      if (s2 > 0.0) add_candidate(polish_distances({s1, s2, v * s1}, {ca, cb, cg}, {aa, bb, cc}));
    }
  }
  if (poses.empty()) throw EmptySolution("P3P has no real solution");
  return poses;
}

}  // namespace relpose
