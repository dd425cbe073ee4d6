#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relpose/autodiff.hpp"
#include "relpose/camera.hpp"
#include "relpose/correlation.hpp"
#include "relpose/feature_grid.hpp"
#include "relpose/hilbert.hpp"
#include "relpose/lm_refine.hpp"
#include "relpose/losses.hpp"
#include "relpose/match_layer.hpp"
#include "relpose/ransac.hpp"
#include "relpose/scene.hpp"

namespace relpose {

/// Trainable state: the matching layer and the keypoint head.
struct Model {
  MatchLayerParams match;
  KeypointHead head;
  SoftMatchNormalization normalization = SoftMatchNormalization::kExcludeDustbin;

  friend bool operator==(const Model& a, const Model& b) {
    return a.match == b.match && a.head.scale == b.head.scale && a.head.bias == b.head.bias &&
           a.normalization == b.normalization;
  }
};

inline constexpr const char* kHeadScaleName = "keypoint_head.scale";
inline constexpr const char* kHeadBiasName = "keypoint_head.bias";

template <typename T>
struct ParamRef {
  std::string name;
  T* value;
};

// Every trainable tensor in a fixed order: matching layer first, then the
// keypoint head (scale, bias).
std::vector<ParamRef<Tensor>> model_parameters(Model& model);
std::vector<ParamRef<const Tensor>> model_parameters(const Model& model);
bool is_keypoint_parameter(const std::string& name);

struct ModelVars {
  std::map<std::string, Var> match;
  Var head_scale;
  Var head_bias;
};

ModelVars bind_model(Tape& tape, const Model& model, bool match_requires_grad = true,
                     bool head_requires_grad = true);

// The leaf bound for the parameter called `name`.
const Var& model_var(const ModelVars& vars, const std::string& name);
// Gradients in model_parameters order; zeros for untracked leaves.
std::vector<Tensor> collect_gradients(const ModelVars& vars, const Model& model);

/// Every intermediate of one differentiable pair evaluation.
struct PairForward {
  GridVars query;
  GridVars reference;
  Var volume;
  MatchMapVars match;
  SoftMatchVars soft;
};

// Keypoint head -> correlation -> raveling -> matching layer -> soft
// matches. Descriptors enter as constants.
PairForward forward_pair(const ModelVars& vars, const Model& model, const FeatureGrid& query,
                         const FeatureGrid& reference, const HilbertMap& map);

/// Inference result for one pair.
struct PairPrediction {
  MatchMap match;
  SoftCorrespondenceSet soft;
  std::vector<Match> matches;  // after hard_matches
};

PairPrediction predict_pair(const Model& model, const FeatureGrid& query,
                            const FeatureGrid& reference, const HilbertMap& map,
                            double match_threshold = kDefaultMatchThreshold);

// Lifts each match's reference pixel to a reference-camera 3D point using
// the reference depth; matches without valid depth are dropped.
std::vector<Correspondence2D3D> lift_matches(const std::vector<Match>& matches,
                                             const View& reference);

enum class Matcher { kLearned, kBaseline };

struct EvalOptions {
  Matcher matcher = Matcher::kLearned;
  double baseline_ratio = 0.7;
  double match_threshold = kDefaultMatchThreshold;
  double inlier_px = 8.0;
  RansacOptions ransac;
  std::size_t lm_iters = 50;
};

struct PairMetrics {
  std::string pair_id;  // "query_id:reference_id"
  std::size_t matches = 0;
  double inlier_ratio = 0.0;
  bool estimated = false;
  double rot_err_deg = 0.0;
  double trans_err_m = 0.0;
};

/// Aggregate metrics. Rotation and translation statistics cover estimated
/// pairs only and are NaN when none was estimated.
struct MetricsSummary {
  std::size_t count = 0;
  std::size_t estimated = 0;
  double mean_inlier_ratio = 0.0;
  double n_pct = 0.0;
  double r_a = 0.0;
  double r_m = 0.0;
  double t_a = 0.0;
  double t_m = 0.0;
};

// Fraction of matches with ||kp - R(kp')|| <= inlier_px under the true
// pose; matches without depth or behind the camera count as outliers and
// a pair without matches scores 0.
double inlier_ratio(const std::vector<Match>& matches, const View& reference,
                    const Pose& truth, double inlier_px = 8.0);

PairMetrics evaluate_pair(const std::vector<View>& views, const ScenePair& pair,
                          const Model& model, const HilbertMap& map, const EvalOptions& options);
std::vector<PairMetrics> evaluate_pairs(const std::vector<View>& views,
                                        const std::vector<ScenePair>& pairs, const Model& model,
                                        const HilbertMap& map, const EvalOptions& options = {});
MetricsSummary summarize(const std::vector<PairMetrics>& metrics);

double median(std::vector<double> values);

// Columns pair_id,inlier_ratio,rot_err_deg,trans_err_m,estimated; errors
// of pairs without an estimate are written as "nan".
void write_metrics_csv(const std::filesystem::path& path, const std::vector<PairMetrics>& rows);

}  // namespace relpose
