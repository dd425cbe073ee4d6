#pragma once

#include <vector>

#include "relpose/camera.hpp"

namespace relpose {

// Minimal absolute-pose solver from three 2D-3D correspondences. Returns
// up to four candidate poses, each reprojecting the three points exactly.
// Throws DegenerateSampleError for collinear world points or coincident
// bearings, EmptySolution when no real positive solution exists.
std::vector<Pose> p3p_solve(const Correspondence2D3D& c1, const Correspondence2D3D& c2,
                            const Correspondence2D3D& c3,
                            const CameraIntrinsics& intrinsics);

}  // namespace relpose
