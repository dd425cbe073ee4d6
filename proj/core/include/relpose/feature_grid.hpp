#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>

#include "relpose/autodiff.hpp"
#include "relpose/tensor.hpp"

namespace relpose {

inline constexpr std::size_t kCellSize = 8;
inline constexpr std::size_t kSubCellPositions = kCellSize * kCellSize;
inline constexpr std::size_t kKeypointChannels = kSubCellPositions + 1;
// Zero-based index of the "no keypoint" channel.
inline constexpr std::size_t kNoKeypoint = kSubCellPositions;
inline constexpr std::size_t kDescriptorDim = 256;

/// Per-view keypoint and descriptor maps on the 8x8-pixel cell grid.
///
/// Cell (i, j) covers pixels x in [8i, 8i+8), y in [8j, 8j+8), where x runs
/// along the first image axis (extent image_h) and y along the second.
/// Channel c < 64 of the keypoint map is the sub-cell position
/// (m, n) = (c / 8, c % 8); channel 64 means "no keypoint".
struct FeatureGrid {
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  Tensor keypoint_logits;  // [h,w,65], as produced by the detector
  Tensor keypoints;        // K: softmax of the logits over all 65 channels
  Tensor descriptors_raw;  // [h,w,dim], as produced by the detector
  Tensor descriptors;      // D: unit L2 norm per cell

  std::size_t cells_h() const { return keypoints.dim(0); }
  std::size_t cells_w() const { return keypoints.dim(1); }
  std::size_t descriptor_dim() const { return descriptors.dim(2); }
};

/// Tape-attached counterpart of FeatureGrid.
struct GridVars {
  Var logits;
  Var keypoints;
  Var descriptors;
};

// Throws ShapeError on bad shapes and DegenerateDescriptorError on a zero
// descriptor fiber. Image size is 8 * cell count in both axes.
FeatureGrid normalize_grid(const Tensor& raw_keypoint_logits,
                           const Tensor& raw_descriptors);
GridVars normalize_grid(const Var& raw_keypoint_logits, const Var& raw_descriptors);

// Differentiable L2 normalization of every last-axis fiber.
Var l2_normalize_last(const Var& x);

// K'(i,j) = 1 - K(i,j,no-keypoint), shape [h,w].
Tensor keypoint_confidence(const FeatureGrid& grid);
Var keypoint_confidence(const Var& keypoints);

// Pixel coordinates kp(i,j) = (8i + E[m], 8j + E[n]) where the expectation
// is over the first 64 channels renormalized to sum to one. Shape [h,w,2].
Tensor softargmax_cell_coords(const FeatureGrid& grid);
Var softargmax_cell_coords(const Var& keypoint_logits);

// Learned per-channel calibration of the detector logits,
// logits' = scale * logits + bias. Identity at (1, 0).
struct KeypointHead {
  Tensor scale{Shape{kKeypointChannels}, 1.0};
  Tensor bias{Shape{kKeypointChannels}, 0.0};
};

Var apply_keypoint_head(const Var& raw_logits, const Var& scale, const Var& bias);
FeatureGrid apply_keypoint_head(const FeatureGrid& grid, const KeypointHead& head);

// "FGRD" layout: magic, u32 version (=1), u32 image_h, image_w, u32 h, w,
// then the raw keypoint logits and the raw descriptors as TNSR blocks.
// The loader normalizes.
void write_feature_grid(std::ostream& out, const FeatureGrid& grid);
FeatureGrid read_feature_grid(std::istream& in);
void save_feature_grid(const std::filesystem::path& path, const FeatureGrid& grid);
FeatureGrid load_feature_grid(const std::filesystem::path& path);

}  // namespace relpose
