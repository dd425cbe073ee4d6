#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "relpose/autodiff.hpp"
#include "relpose/feature_grid.hpp"
#include "relpose/hilbert.hpp"

namespace relpose {

/// Raveled correlation volume of a (query, reference) pair, shape
/// [h,w,h*w+1]. Channel h*w is the zero-filled no-match slot.
struct CorrelationVolume {
  Tensor values;
  std::string query_id;
  std::string reference_id;
};

// C(i,j,i',j') = K'_q(i,j) K'_r(i',j') <D_q(i,j), D_r(i',j')>, shape
// [h,w,h,w]. Inputs are confidences [h,w] and unit descriptors [h,w,dim].
Var correlation_4d(const Var& query_confidence, const Var& query_descriptors,
                   const Var& reference_confidence, const Var& reference_descriptors);

// Correlation followed by raveling of the reference cell axes along the
// curve. Throws ShapeError when the grids or the curve disagree.
Var correlation_volume(const GridVars& query, const GridVars& reference,
                       const HilbertMap& map);
CorrelationVolume correlation_volume(const FeatureGrid& query,
                                     const FeatureGrid& reference,
                                     const HilbertMap& map,
                                     std::string query_id = {},
                                     std::string reference_id = {});

/// A discrete correspondence between a query cell and a reference pixel.
struct Match {
  Cell query_cell;
  Eigen::Vector2d query_px = Eigen::Vector2d::Zero();
  Eigen::Vector2d reference_px = Eigen::Vector2d::Zero();
  double weight = 0.0;
};

// Nearest-neighbour descriptor matching with Lowe's ratio test. For every
// query cell the best reference cell by dot product is kept iff
// best_distance / second_distance <= ratio, with distance sqrt(2 - 2 dot).
// Keypoints are the softargmax coordinates of both grids.
std::vector<Match> baseline_argmax_matching(const FeatureGrid& query,
                                            const FeatureGrid& reference,
                                            double ratio);

}  // namespace relpose
