#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "relpose/camera.hpp"
#include "relpose/pipeline.hpp"
#include "relpose/ransac.hpp"
#include "relpose/scene.hpp"

namespace relpose {

struct LocalizeOptions {
  Matcher matcher = Matcher::kLearned;
  double baseline_ratio = 0.7;
  double match_threshold = kDefaultMatchThreshold;
  RansacOptions ransac;
  std::size_t lm_iters = 50;
  double merge_dist_m = 1.0;
};

struct CandidateResult {
  std::string reference_id;
  std::size_t reference = 0;  // index into the database
  bool estimated = false;
  Pose relative;     // reference camera -> query camera
  Pose global;       // query camera-from-world implied by this candidate
  std::size_t inliers = 0;
  double residual = 0.0;  // LM cost on the inliers
  // Matches lifted into the reference camera frame; RANSAC inliers first
  // flagged by `inlier_mask`.
  std::vector<Correspondence2D3D> correspondences;
  std::vector<bool> inlier_mask;
};

struct LocalizationResult {
  std::string query_id;
  bool estimated = false;
  Pose global_pose;
  std::size_t inlier_count = 0;
  std::size_t best = 0;  // index into candidates
  std::vector<CandidateResult> candidates;
  bool refined = false;
  double timing_ms = 0.0;
};

// Pairwise pose against every retrieved candidate, keeping the candidate
// with the most inliers (ties: lower LM residual, then retrieval order).
// Candidates that cannot be estimated are recorded with estimated = false.
// Throws DataError on unknown candidate ids and LocalizationFailure when
// no candidate yields a pose.
LocalizationResult localize(const View& query, const std::vector<View>& database,
                            const std::vector<std::string>& retrieval, const Model& model,
                            const HilbertMap& map, const LocalizeOptions& options = {});

// Pools the correspondences of every candidate whose implied query camera
// centre lies within merge_dist_m of the best candidate's, maps them into
// the world frame and re-solves with RANSAC + LM. The reported pose never
// has fewer pooled inliers than the unrefined one; a pool with fewer than
// four correspondences returns the input unchanged.
LocalizationResult pose_refinement(const LocalizationResult& result,
                                   const std::vector<View>& database,
                                   const CameraIntrinsics& intrinsics,
                                   const LocalizeOptions& options = {});

}  // namespace relpose
