#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "relpose/camera.hpp"
#include "relpose/feature_grid.hpp"
#include "relpose/losses.hpp"

namespace relpose {

/// One registered image: camera-from-world pose, depth and feature grid.
struct View {
  std::string id;
  Pose global_pose;
  CameraIntrinsics intrinsics;
  DepthMap depth;
  FeatureGrid features;
};

/// Ordered (query, reference) view pair; indices refer to the owning view
/// list. relative_pose maps reference-camera to query-camera coordinates.
struct ScenePair {
  std::size_t query = 0;
  std::size_t reference = 0;
  Pose relative_pose;
  double overlap_fraction = 0.0;
};

struct Landmark {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  std::vector<double> descriptor;  // unit norm
};

/// Parameters of the synthetic desk-scale scene: a textured back wall at
/// z = depth_max and an occluding panel (|X| <= 0.6 m) at
/// z = depth_min + 0.4 (depth_max - depth_min), seen by cameras looking
/// down +z from a box around the origin.
struct SynthConfig {
  std::size_t grid_h = 8;
  std::size_t grid_w = 8;
  std::size_t view_count = 24;
  std::size_t landmark_count = 200;
  std::size_t descriptor_dim = kDescriptorDim;
  double descriptor_noise_sigma = 0.1;
  double outlier_fraction = 0.0;  // share of keypoint cells that are distractors
  double depth_min = 2.0;
  double depth_max = 8.0;
  double baseline_max = 1.5;        // half-size of the camera-centre box (m)
  double rotation_max_deg = 10.0;   // per-axis camera rotation jitter
  std::size_t max_pairs_per_query = 64;
  double max_pair_distance_m = 20.0;
  double frustum_range_m = 10.0;
  std::uint64_t seed = 0;

  // Throws RangeError on invalid values.
  void validate() const;
};

/// A landmark encoded as a genuine keypoint of a view.
struct LandmarkObservation {
  std::size_t landmark = 0;
  Eigen::Vector2d px = Eigen::Vector2d::Zero();
};

struct Scene {
  SynthConfig config;
  std::vector<View> views;
  std::vector<Landmark> landmarks;
  std::vector<ScenePair> pairs;
  std::vector<std::vector<LandmarkObservation>> observations;  // per view
};

// Deterministic for a given config. Throws GenerationError when no
// landmark is seen twice or no view pair survives the pair filters.
Scene generate_scene(const SynthConfig& config);

ScenePair make_pair(const std::vector<View>& views, std::size_t query, std::size_t reference);

// Share of the lattice points of either frustum (lattice^3 points up to
// max_range_m) that fall inside the other frustum.
double frustum_overlap(const View& a, const View& b, double max_range_m,
                       std::size_t lattice = 5);
bool compatible_pair(const View& a, const View& b, double max_dist_m = 20.0,
                     double max_range_m = 10.0);
bool nontrivial_pair(const ScenePair& pair, double min_t_m = 0.5, double min_r_deg = 5.0);

// Camera centre of a camera-from-world pose.
Eigen::Vector3d camera_center(const Pose& global_pose);

/// Ground-truth correspondence between the two views of a pair.
struct TrueCorrespondence {
  Eigen::Vector2d query_px;
  Eigen::Vector2d reference_px;
  std::size_t landmark = 0;
};

// Landmarks observed as genuine keypoints in both views of the pair.
std::vector<TrueCorrespondence> true_correspondences(const Scene& scene,
                                                     const ScenePair& pair);

/// Produces the current keypoint maps of a view.
using FeatureExtractor = std::function<FeatureGrid(const View&)>;

// Scene-adaptation labels per view (1..65, row-major cells). Each view
// aggregates its own argmax detections and the detections of the views it
// is paired with, reprojected through the true poses and depth; occluded
// or out-of-view reprojections are dropped. A reprojection snaps to the
// nearest of the 64 sub-cell positions; within a cell the candidate with
// the highest source confidence K' wins, earlier sources winning ties.
std::vector<KeypointLabels> scene_adaptation_targets(const std::vector<View>& views,
                                                     const std::vector<ScenePair>& pairs,
                                                     const FeatureExtractor& extractor);

// Order-sensitive FNV-1a hash of a label set, logged per refresh period.
std::uint64_t label_hash(const std::vector<KeypointLabels>& labels);

}  // namespace relpose
