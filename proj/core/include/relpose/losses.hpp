#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "relpose/autodiff.hpp"
#include "relpose/camera.hpp"
#include "relpose/match_layer.hpp"

namespace relpose {

struct LossHyper {
  double kappa = 0.1;  // inlier-count temperature
  double tau = 16.0;   // inlier residual scale in pixels
  double alpha = 2.0;  // weight of the inlier loss
  double beta = 2.0;   // weight of the keypoint loss
};

/// Weighted DLT constraints of a correspondence set against a known pose.
struct DltSystem {
  Eigen::MatrixXd x;                   // [2N, 12]
  Eigen::Matrix<double, 12, 1> e_tilde;  // row-major (R|T), unit norm
  std::vector<double> row_weights;     // one per row, repeated per pair
};

// Two rows per correspondence, built from the normalized query coordinates
// (u, v) = C^-1 kp and the reference-frame point P = (X, Y, Z):
// [X Y Z 1 0 0 0 0 -uX -uY -uZ -u] and [0 0 0 0 X Y Z 1 -vX -vY -vZ -v].
DltSystem build_dlt(std::span<const Correspondence2D3D> correspondences,
                    const CameraIntrinsics& intrinsics, const Pose& truth);

// sum_j w_j ||X_j e_tilde||^2 over row pairs.
double pose_loss(const DltSystem& system);

/// Context shared by the differentiable losses of one (query, reference)
/// pair: the reference depth used to lift kp' to 3D and the true
/// reference-to-query pose.
struct PairGeometry {
  const DepthMap* reference_depth = nullptr;
  CameraIntrinsics intrinsics;
  Pose truth;
};

// Differentiable pose loss over all cells, weighted by M'. Cells whose kp'
// has no valid reference depth contribute nothing.
Var pose_loss(const SoftMatchVars& matches, const PairGeometry& geometry);

// exp(-kappa * s) with s = sum M' sigmoid(tau - ||kp - R(kp')||). Cells
// without valid depth or reprojecting behind the query camera add 0 to s.
Var inlier_loss(const SoftMatchVars& matches, const PairGeometry& geometry,
                const LossHyper& hyper = {});
// Returns s itself, for inspection.
double soft_inlier_count(const SoftMatchVars& matches, const PairGeometry& geometry,
                         const LossHyper& hyper = {});
double inlier_loss_from_count(double s, const LossHyper& hyper = {});

/// Keypoint labels in 1..65, one per cell in row-major order; 65 is the
/// "no keypoint" class.
using KeypointLabels = std::vector<std::size_t>;
inline constexpr std::size_t kNoKeypointLabel = 65;

// Mean over cells of -log softmax(logits)[label], one view. Throws
// LabelError on labels outside 1..65 or a label count that does not match.
Var keypoint_ce(const Var& logits, const KeypointLabels& labels);
// Same from probabilities K.
double keypoint_ce(const Tensor& keypoints, const KeypointLabels& labels);
// Sum of the two per-view terms.
Var keypoint_ce_loss(const Var& query_logits, const KeypointLabels& query_labels,
                     const Var& reference_logits, const KeypointLabels& reference_labels);

struct LossBreakdown {
  double pose = 0.0;
  double inliers = 0.0;
  double keypoints = 0.0;
  double total = 0.0;
  LossHyper hyper;
};

LossBreakdown total_loss(double pose, double inliers, double keypoints,
                         const LossHyper& hyper = {});
Var total_loss(const Var& pose, const Var& inliers, const Var& keypoints,
               const LossHyper& hyper = {});

}  // namespace relpose
