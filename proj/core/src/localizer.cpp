#include "relpose/localizer.hpp"

#include <chrono>

#include "relpose/errors.hpp"
#include "relpose/lm_refine.hpp"

namespace relpose {

namespace {

std::size_t find_view(const std::vector<View>& views, const std::string& id) {
  for (std::size_t k = 0; k < views.size(); ++k) {
    if (views[k].id == id) return k;
  }
  throw DataError("retrieval candidate " + id + " is not in the database");
}

std::vector<Correspondence2D3D> select(const std::vector<Correspondence2D3D>& all,
                                       const std::vector<bool>& mask) {
  std::vector<Correspondence2D3D> out;
  for (std::size_t k = 0; k < all.size(); ++k) {
    if (mask[k]) out.push_back(all[k]);
  }
  return out;
}

bool better(const CandidateResult& a, const CandidateResult& b) {
  if (a.inliers != b.inliers) return a.inliers > b.inliers;
  return a.residual < b.residual;
}

}  // namespace

LocalizationResult localize(const View& query, const std::vector<View>& database,
                            const std::vector<std::string>& retrieval, const Model& model,
                            const HilbertMap& map, const LocalizeOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  LocalizationResult result;
  result.query_id = query.id;
  for (const std::string& id : retrieval) {
    CandidateResult c;
    c.reference_id = id;
    c.reference = find_view(database, id);
    const View& ref = database[c.reference];
    const std::vector<Match> matches =
        options.matcher == Matcher::kBaseline
            ? baseline_argmax_matching(query.features, ref.features, options.baseline_ratio)
            : predict_pair(model, query.features, ref.features, map, options.match_threshold)
                  .matches;
    c.correspondences = lift_matches(matches, ref);
    try {
      const RansacResult rr = ransac_pose(c.correspondences, query.intrinsics, options.ransac);
      const auto inliers = select(c.correspondences, rr.inliers);
      const LmResult lm = lm_refine_detailed(rr.pose, inliers, query.intrinsics,
                                             LmOptions{options.lm_iters, 1e-3, 1e-10});
      c.estimated = true;
      c.relative = lm.pose;
      c.global = lm.pose * ref.global_pose;
      c.inliers = rr.inlier_count;
      c.inlier_mask = rr.inliers;
      c.residual = lm.final_cost;
    } catch (const NoPoseError&) {
      c.estimated = false;
    }
    result.candidates.push_back(std::move(c));
  }
  for (std::size_t k = 0; k < result.candidates.size(); ++k) {
    const CandidateResult& c = result.candidates[k];
    if (!c.estimated) continue;
    if (!result.estimated || better(c, result.candidates[result.best])) {
      result.best = k;
      result.estimated = true;
    }
  }
  if (!result.estimated) {
    throw LocalizationFailure("no retrieved candidate yields a pose for " + query.id);
  }
  const CandidateResult& best = result.candidates[result.best];
  result.global_pose = best.global;
  result.inlier_count = best.inliers;
  result.timing_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
  return result;
}

LocalizationResult pose_refinement(const LocalizationResult& result,
                                   const std::vector<View>& database,
                                   const CameraIntrinsics& intrinsics,
                                   const LocalizeOptions& options) {
  if (!result.estimated) return result;
  const auto start = std::chrono::steady_clock::now();
  const Eigen::Vector3d center_max = camera_center(result.global_pose);
  std::vector<Correspondence2D3D> pool;
  for (const CandidateResult& c : result.candidates) {
    if (!c.estimated) continue;
    if ((camera_center(c.global) - center_max).norm() > options.merge_dist_m) continue;
    const Pose world_from_ref = database.at(c.reference).global_pose.inverse();
    for (const Correspondence2D3D& corr : c.correspondences) {
      pool.push_back({corr.image_point, world_from_ref.apply(corr.world_point), corr.weight});
    }
  }
  if (pool.size() < kRansacSampleSize) return result;

  auto count_inliers = [&](const Pose& pose, std::vector<bool>* mask) {
    std::size_t n = 0;
    if (mask) mask->assign(pool.size(), false);
    for (std::size_t k = 0; k < pool.size(); ++k) {
      if (reprojection_residual(pose, pool[k], intrinsics) <= options.ransac.inlier_px) {
        ++n;
        if (mask) (*mask)[k] = true;
      }
    }
    return n;
  };

  // Start from whichever of P_max and the pooled RANSAC model explains
  // more of the pool.
  Pose pose = result.global_pose;
  std::vector<bool> mask;
  std::size_t count = count_inliers(pose, &mask);
  try {
    const RansacResult rr = ransac_pose(pool, intrinsics, options.ransac);
    if (rr.inlier_count >= count) {
      pose = rr.pose;
      mask = rr.inliers;
      count = rr.inlier_count;
    }
  } catch (const NoPoseError&) {
  }
  if (count >= kRansacSampleSize) {
    const Pose refined = lm_refine(pose, select(pool, mask), intrinsics, options.lm_iters);
    std::vector<bool> refined_mask;
    const std::size_t refined_count = count_inliers(refined, &refined_mask);
    if (refined_count >= count) {
      pose = refined;
      count = refined_count;
    }
  }
  LocalizationResult out = result;
  out.global_pose = pose;
  out.inlier_count = count;
  out.refined = true;
  out.timing_ms += std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return out;
}

}  // namespace relpose
