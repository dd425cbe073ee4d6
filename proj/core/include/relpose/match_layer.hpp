#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "relpose/autodiff.hpp"
#include "relpose/correlation.hpp"
#include "relpose/hilbert.hpp"
#include "relpose/tensor.hpp"

namespace relpose {

/// A named parameter tensor. Parameter lists keep a fixed order so that
/// optimizers, checkpoints and gradient checks agree on the layout.
struct NamedTensor {
  std::string name;
  Tensor value;
};
using ParamList = std::vector<NamedTensor>;

// Binds every tensor of `params` as a leaf of `tape`, keyed by name.
std::map<std::string, Var> bind_params(Tape& tape, const ParamList& params,
                                       bool requires_grad = true);

/// Weights of the encoder-decoder matching layer over the raveled volume,
/// viewed as a single-channel 3D volume [h, w, h*w+1].
///
/// Stage s of the encoder is a 3x3x3 convolution to widths[s] channels
/// (stride 1 for s = 0, stride 2 otherwise) followed by PReLU. The decoder
/// mirrors it with stride-2 transposed convolutions, additive skips and a
/// 3x3x3 convolution per stage. A 1x1x1 head maps back to one channel, and
/// the result is added to input_gain * volume plus dustbin_bias on the
/// no-match channel. No layer has a bias, so all-zero weights give
/// all-zero logits.
class MatchLayerParams {
 public:
  explicit MatchLayerParams(std::vector<std::size_t> widths = {8, 16, 32},
                            std::size_t kernel = 3);

  // Zero-mean normal kernels with per-stage fan-in scaling, slopes 0.25.
  static MatchLayerParams random(std::vector<std::size_t> widths, std::uint64_t seed,
                                 double input_gain = 10.0, std::size_t kernel = 3);

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t stages() const { return widths_.size(); }
  std::size_t kernel() const { return kernel_; }

  ParamList& tensors() { return tensors_; }
  const ParamList& tensors() const { return tensors_; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  std::size_t parameter_count() const;

  friend bool operator==(const MatchLayerParams&, const MatchLayerParams&);

 private:
  std::vector<std::size_t> widths_;
  std::size_t kernel_;
  ParamList tensors_;
};

/// How the soft correspondence distribution s_M is normalized.
enum class SoftMatchNormalization {
  kExcludeDustbin,  // softmax over the h*w match channels only
  kIncludeDustbin,  // the full softmax M restricted to the match channels
};

struct MatchMapVars {
  Var logits;   // [h,w,h*w+1]
  Var probs;    // M, softmax over all channels
  Var weights;  // M' = 1 - M[..., h*w], shape [h,w]
  Var soft;     // s_M over the h*w match channels, shape [h,w,h*w]
};

/// Plain-tensor snapshot of MatchMapVars.
struct MatchMap {
  Tensor logits;
  Tensor probs;
  Tensor weights;
  Tensor soft;
};

// Raw matching-layer output. Throws ShapeError if `volume` is not
// [h,w,h*w+1] or a parameter has the wrong shape.
Var matching_logits(const Var& volume, const std::map<std::string, Var>& params,
                    const std::vector<std::size_t>& widths);

MatchMapVars match_map(const Var& logits,
                       SoftMatchNormalization norm = SoftMatchNormalization::kExcludeDustbin);
MatchMapVars matching_forward(const Var& volume, const std::map<std::string, Var>& params,
                              const std::vector<std::size_t>& widths,
                              SoftMatchNormalization norm =
                                  SoftMatchNormalization::kExcludeDustbin);
MatchMap matching_forward(const CorrelationVolume& volume, const MatchLayerParams& params,
                          SoftMatchNormalization norm =
                              SoftMatchNormalization::kExcludeDustbin);

struct SoftMatchVars {
  Var query_kp;      // kp,  [h,w,2]
  Var reference_kp;  // kp', [h,w,2]
  Var weights;       // M',  [h,w]
};

/// Plain soft correspondences, one per query cell in row-major order.
struct SoftCorrespondenceSet {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Tensor query_kp;
  Tensor reference_kp;
  Tensor weights;
  // Reference-camera 3D point per cell, filled by the geometry stage.
  std::vector<Eigen::Vector3d> reference_points;
};

// kp'(i,j) = sum_r s_M(i,j,r) * kp_ref(cell(r)).
SoftMatchVars soft_matches(const MatchMapVars& match, const Var& reference_kp,
                           const Var& query_kp, const HilbertMap& map);
SoftCorrespondenceSet soft_matches(const MatchMap& match, const Tensor& reference_kp,
                                   const Tensor& query_kp, const HilbertMap& map);

inline constexpr double kDefaultMatchThreshold = 0.5;

// Keeps cell (i,j) iff M'(i,j) >= threshold. Throws RangeError when the
// threshold is negative.
std::vector<Match> hard_matches(const SoftCorrespondenceSet& set, const MatchMap& match,
                                double weight_threshold = kDefaultMatchThreshold);

}  // namespace relpose
