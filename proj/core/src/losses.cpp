#include "relpose/losses.hpp"

#include <cmath>
#include <limits>
#include <optional>

#include "relpose/errors.hpp"
#include "relpose/ops.hpp"

namespace relpose {

DltSystem build_dlt(std::span<const Correspondence2D3D> correspondences,
                    const CameraIntrinsics& intrinsics, const Pose& truth) {
  DltSystem s;
  const std::size_t n = correspondences.size();
  s.x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(2 * n), 12);
  s.row_weights.reserve(2 * n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& c = correspondences[k];
    const Eigen::Vector3d uv = intrinsics.unproject(c.image_point);
    const Eigen::Vector3d& p = c.world_point;
    const auto r0 = static_cast<Eigen::Index>(2 * k);
    s.x.block<1, 3>(r0, 0) = p.transpose();
    s.x(r0, 3) = 1.0;
    s.x.block<1, 3>(r0, 8) = -uv.x() * p.transpose();
    s.x(r0, 11) = -uv.x();
    s.x.block<1, 3>(r0 + 1, 4) = p.transpose();
    s.x(r0 + 1, 7) = 1.0;
    s.x.block<1, 3>(r0 + 1, 8) = -uv.y() * p.transpose();
    s.x(r0 + 1, 11) = -uv.y();
    s.row_weights.push_back(c.weight);
    s.row_weights.push_back(c.weight);
  }
  const Eigen::Matrix3d r = truth.rotation_matrix();
  for (int row = 0; row < 3; ++row) {
    s.e_tilde.segment<3>(4 * row) = r.row(row).transpose();
    s.e_tilde(4 * row + 3) = truth.translation()(row);
  }
  s.e_tilde.normalize();
  return s;
}

double pose_loss(const DltSystem& system) {
  const Eigen::VectorXd residual = system.x * system.e_tilde;
  double loss = 0.0;
  for (Eigen::Index k = 0; k < residual.size(); ++k) {
    loss += system.row_weights[static_cast<std::size_t>(k)] * residual(k) * residual(k);
  }
  return loss;
}

namespace {

// kp' lifted to a reference-frame 3D point with its pixel Jacobian.
struct Lifted {
  Eigen::Vector3d point;
  Eigen::Matrix<double, 3, 2> jacobian;
};

std::optional<Lifted> lift(const Eigen::Vector2d& px, const PairGeometry& g) {
  const auto sample = sample_depth(*g.reference_depth, g.intrinsics, px);
  if (!sample) return std::nullopt;
  const Eigen::Vector3d n = g.intrinsics.unproject(px);
  const double len = n.norm();
  const Eigen::Vector3d d = n / len;
  const Eigen::Matrix3d dd_dn = (Eigen::Matrix3d::Identity() - d * d.transpose()) / len;
  Eigen::Matrix<double, 3, 2> dn_dpx = Eigen::Matrix<double, 3, 2>::Zero();
  dn_dpx(0, 0) = 1.0 / g.intrinsics.fx;
  dn_dpx(1, 1) = 1.0 / g.intrinsics.fy;
  Lifted out;
  out.point = d * sample->distance;
  out.jacobian = d * sample->gradient.transpose() + sample->distance * dd_dn * dn_dpx;
  return out;
}

void check_matches(const SoftMatchVars& m, const PairGeometry& g) {
  if (!g.reference_depth) throw ContractError("pair geometry has no reference depth");
  const Shape& kp = m.query_kp.shape();
  if (kp.size() != 3 || kp[2] != 2 || m.reference_kp.shape() != kp ||
      m.weights.shape() != Shape{kp[0], kp[1]}) {
    throw ShapeError("soft matches have inconsistent shapes");
  }
}

Eigen::Vector2d point2(const Tensor& t, std::size_t cell) {
  return {t[2 * cell], t[2 * cell + 1]};
}

}  // namespace

Var pose_loss(const SoftMatchVars& matches, const PairGeometry& geometry) {
  check_matches(matches, geometry);
  const Tensor& w = matches.weights.value();
  const Tensor& qkp = matches.query_kp.value();
  const Tensor& rkp = matches.reference_kp.value();
  const std::size_t cells = w.size();
  const Eigen::Matrix3d r = geometry.truth.rotation_matrix();
  const Eigen::Vector3d t = geometry.truth.translation();
  const double e_norm = std::sqrt(3.0 + t.squaredNorm());

  // Per cell: rho1 = (a - u c) / |e|, rho2 = (b - v c) / |e| with
  // (a, b, c) = R P + t.
  struct CellTerm {
    bool active = false;
    double rho1 = 0.0, rho2 = 0.0, c = 0.0;
    Eigen::Vector3d dloss_dp_unweighted = Eigen::Vector3d::Zero();
    Eigen::Matrix<double, 3, 2> dp_dkp;
  };
  std::vector<CellTerm> terms(cells);
  double loss = 0.0;
  for (std::size_t k = 0; k < cells; ++k) {
    const auto lifted = lift(point2(rkp, k), geometry);
    if (!lifted) continue;
    const Eigen::Vector3d uv = geometry.intrinsics.unproject(point2(qkp, k));
    const Eigen::Vector3d cam = r * lifted->point + t;
    CellTerm& term = terms[k];
    term.active = true;
    term.rho1 = (cam.x() - uv.x() * cam.z()) / e_norm;
    term.rho2 = (cam.y() - uv.y() * cam.z()) / e_norm;
    term.c = cam.z();
    term.dloss_dp_unweighted =
        2.0 / e_norm *
        (term.rho1 * (r.row(0) - uv.x() * r.row(2)) + term.rho2 * (r.row(1) - uv.y() * r.row(2)))
            .transpose();
    term.dp_dkp = lifted->jacobian;
    loss += w[k] * (term.rho1 * term.rho1 + term.rho2 * term.rho2);
  }
  const CameraIntrinsics k_in = geometry.intrinsics;
  return matches.weights.tape().record(
      Tensor::scalar(loss), {matches.weights, matches.query_kp, matches.reference_kp},
      [terms = std::move(terms), e_norm, k_in](BackwardContext& c) {
        const double g = c.out_grad[0];
        const Tensor& w = *c.in_values[0];
        Tensor* gw = c.in_grads[0];
        Tensor* gq = c.in_grads[1];
        Tensor* gr = c.in_grads[2];
        for (std::size_t k = 0; k < terms.size(); ++k) {
          const CellTerm& term = terms[k];
          if (!term.active) continue;
          if (gw) (*gw)[k] += g * (term.rho1 * term.rho1 + term.rho2 * term.rho2);
          if (gq) {
            (*gq)[2 * k] += g * w[k] * 2.0 * term.rho1 * (-term.c / e_norm) / k_in.fx;
            (*gq)[2 * k + 1] += g * w[k] * 2.0 * term.rho2 * (-term.c / e_norm) / k_in.fy;
          }
          if (gr) {
            const Eigen::Vector2d d = term.dp_dkp.transpose() * term.dloss_dp_unweighted;
            (*gr)[2 * k] += g * w[k] * d.x();
            (*gr)[2 * k + 1] += g * w[k] * d.y();
          }
        }
      });
}

namespace {

struct InlierTerm {
  bool active = false;
  double sigma = 0.0;
  Eigen::Vector2d dres_dq = Eigen::Vector2d::Zero();
  Eigen::Vector2d dres_dr = Eigen::Vector2d::Zero();
};

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::vector<InlierTerm> inlier_terms(const SoftMatchVars& matches, const PairGeometry& geometry,
                                     const LossHyper& hyper, double& s) {
  check_matches(matches, geometry);
  const Tensor& w = matches.weights.value();
  const Tensor& qkp = matches.query_kp.value();
  const Tensor& rkp = matches.reference_kp.value();
  const Eigen::Matrix3d r = geometry.truth.rotation_matrix();
  const CameraIntrinsics& in = geometry.intrinsics;
  std::vector<InlierTerm> terms(w.size());
  s = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    const auto lifted = lift(point2(rkp, k), geometry);
    if (!lifted) continue;
    const Eigen::Vector3d x = geometry.truth.apply(lifted->point);
    if (!(x.z() > 0.0)) continue;
    const Eigen::Vector2d proj = project(x, in);
    const Eigen::Vector2d diff = point2(qkp, k) - proj;
    const double res = diff.norm();
    InlierTerm& term = terms[k];
    term.active = true;
    term.sigma = sigmoid(hyper.tau - res);
    if (res > 0.0) {
      const Eigen::Vector2d dir = diff / res;
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << in.fx / x.z(), 0.0, -in.fx * x.x() / (x.z() * x.z()), 0.0, in.fy / x.z(),
          -in.fy * x.y() / (x.z() * x.z());
      term.dres_dq = dir;
      term.dres_dr = -(dproj * r * lifted->jacobian).transpose() * dir;
    }
    s += w[k] * term.sigma;
  }
  return terms;
}

}  // namespace

double soft_inlier_count(const SoftMatchVars& matches, const PairGeometry& geometry,
                         const LossHyper& hyper) {
  double s = 0.0;
  inlier_terms(matches, geometry, hyper, s);
  return s;
}

double inlier_loss_from_count(double s, const LossHyper& hyper) {
  return std::exp(-hyper.kappa * s);
}

Var inlier_loss(const SoftMatchVars& matches, const PairGeometry& geometry,
                const LossHyper& hyper) {
  double s = 0.0;
  std::vector<InlierTerm> terms = inlier_terms(matches, geometry, hyper, s);
  const double loss = inlier_loss_from_count(s, hyper);
  const double kappa = hyper.kappa;
  return matches.weights.tape().record(
      Tensor::scalar(loss), {matches.weights, matches.query_kp, matches.reference_kp},
      [terms = std::move(terms), loss, kappa](BackwardContext& c) {
        const double gs = c.out_grad[0] * (-kappa * loss);
        const Tensor& w = *c.in_values[0];
        Tensor* gw = c.in_grads[0];
        Tensor* gq = c.in_grads[1];
        Tensor* gr = c.in_grads[2];
        for (std::size_t k = 0; k < terms.size(); ++k) {
          const InlierTerm& term = terms[k];
          if (!term.active) continue;
          if (gw) (*gw)[k] += gs * term.sigma;
          // d sigma(tau - res) / d res = -sigma (1 - sigma)
          const double gres = gs * w[k] * (-term.sigma * (1.0 - term.sigma));
          if (gq) {
            (*gq)[2 * k] += gres * term.dres_dq.x();
            (*gq)[2 * k + 1] += gres * term.dres_dq.y();
          }
          if (gr) {
            (*gr)[2 * k] += gres * term.dres_dr.x();
            (*gr)[2 * k + 1] += gres * term.dres_dr.y();
          }
        }
      });
}

namespace {

void check_labels(const Shape& shape, const KeypointLabels& labels) {
  if (shape.size() != 3 || shape[2] != kKeypointChannels) {
    throw ShapeError("keypoint map must be [h,w,65], got " + shape_to_string(shape));
  }
  if (labels.size() != shape[0] * shape[1]) {
    throw LabelError("expected " + std::to_string(shape[0] * shape[1]) + " labels, got " +
                     std::to_string(labels.size()));
  }
  for (std::size_t l : labels) {
    if (l < 1 || l > kKeypointChannels) {
      throw LabelError("keypoint label " + std::to_string(l) + " outside 1..65");
    }
  }
}

}  // namespace

Var keypoint_ce(const Var& logits, const KeypointLabels& labels) {
  const Tensor& x = logits.value();
  check_labels(x.shape(), labels);
  const std::size_t cells = labels.size(), ch = kKeypointChannels;
  Tensor probs(Shape{cells, ch});
  double loss = 0.0;
  for (std::size_t k = 0; k < cells; ++k) {
    const double* row = x.data().data() + k * ch;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < ch; ++c) mx = std::max(mx, row[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < ch; ++c) total += std::exp(row[c] - mx);
    const double log_z = mx + std::log(total);
    for (std::size_t c = 0; c < ch; ++c) probs[k * ch + c] = std::exp(row[c] - log_z);
    loss += log_z - row[labels[k] - 1];
  }
  loss /= static_cast<double>(cells);
  return logits.tape().record(
      Tensor::scalar(loss), {logits},
      [probs = std::move(probs), labels, cells, ch](BackwardContext& c) {
        Tensor* g = c.in_grads[0];
        if (!g) return;
        const double scale = c.out_grad[0] / static_cast<double>(cells);
        for (std::size_t k = 0; k < cells; ++k) {
          for (std::size_t ci = 0; ci < ch; ++ci) {
            const double target = ci + 1 == labels[k] ? 1.0 : 0.0;
            (*g)[k * ch + ci] += scale * (probs[k * ch + ci] - target);
          }
        }
      });
}

double keypoint_ce(const Tensor& keypoints, const KeypointLabels& labels) {
  check_labels(keypoints.shape(), labels);
  double loss = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    loss -= std::log(keypoints[k * kKeypointChannels + labels[k] - 1]);
  }
  return loss / static_cast<double>(labels.size());
}

Var keypoint_ce_loss(const Var& query_logits, const KeypointLabels& query_labels,
                     const Var& reference_logits, const KeypointLabels& reference_labels) {
  return ops::add(keypoint_ce(query_logits, query_labels),
                  keypoint_ce(reference_logits, reference_labels));
}

LossBreakdown total_loss(double pose, double inliers, double keypoints,
                         const LossHyper& hyper) {
  return {pose, inliers, keypoints, pose + hyper.alpha * inliers + hyper.beta * keypoints,
          hyper};
}

Var total_loss(const Var& pose, const Var& inliers, const Var& keypoints,
               const LossHyper& hyper) {
  return ops::add(ops::add(pose, ops::affine(inliers, hyper.alpha)),
                  ops::affine(keypoints, hyper.beta));
}

}  // namespace relpose
