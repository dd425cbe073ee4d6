#include "relpose/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "relpose/errors.hpp"
#include "relpose/ops.hpp"

namespace relpose {

std::vector<ParamRef<Tensor>> model_parameters(Model& model) {
  std::vector<ParamRef<Tensor>> out;
  for (auto& p : model.match.tensors()) out.push_back({p.name, &p.value});
  out.push_back({kHeadScaleName, &model.head.scale});
  out.push_back({kHeadBiasName, &model.head.bias});
  return out;
}

std::vector<ParamRef<const Tensor>> model_parameters(const Model& model) {
  std::vector<ParamRef<const Tensor>> out;
  for (const auto& p : model.match.tensors()) out.push_back({p.name, &p.value});
  out.push_back({kHeadScaleName, &model.head.scale});
  out.push_back({kHeadBiasName, &model.head.bias});
  return out;
}

bool is_keypoint_parameter(const std::string& name) { return name.starts_with("keypoint_head."); }

ModelVars bind_model(Tape& tape, const Model& model, bool match_requires_grad,
                     bool head_requires_grad) {
  ModelVars v;
  v.match = bind_params(tape, model.match.tensors(), match_requires_grad);
  v.head_scale = tape.leaf(model.head.scale, head_requires_grad);
  v.head_bias = tape.leaf(model.head.bias, head_requires_grad);
  return v;
}

const Var& model_var(const ModelVars& vars, const std::string& name) {
  if (name == kHeadScaleName) return vars.head_scale;
  if (name == kHeadBiasName) return vars.head_bias;
  auto it = vars.match.find(name);
  if (it == vars.match.end()) throw ContractError("unknown model parameter: " + name);
  return it->second;
}

std::vector<Tensor> collect_gradients(const ModelVars& vars, const Model& model) {
  std::vector<Tensor> out;
  for (const auto& p : model_parameters(model)) {
    const Var& v = model_var(vars, p.name);
    out.push_back(v.requires_grad() ? v.grad() : Tensor(p.value->shape(), 0.0));
  }
  return out;
}

namespace {

GridVars head_grid(Tape& tape, const ModelVars& vars, const FeatureGrid& grid) {
  GridVars g;
  g.logits = apply_keypoint_head(tape.constant(grid.keypoint_logits), vars.head_scale,
                                 vars.head_bias);
  g.keypoints = ops::softmax_axis(g.logits, 2);
  g.descriptors = tape.constant(grid.descriptors);
  return g;
}

}  // namespace

PairForward forward_pair(const ModelVars& vars, const Model& model, const FeatureGrid& query,
                         const FeatureGrid& reference, const HilbertMap& map) {
  Tape& tape = vars.head_scale.tape();
  PairForward f;
  f.query = head_grid(tape, vars, query);
  f.reference = head_grid(tape, vars, reference);
  f.volume = correlation_volume(f.query, f.reference, map);
  f.match = matching_forward(f.volume, vars.match, model.match.widths(), model.normalization);
  f.soft = soft_matches(f.match, softargmax_cell_coords(f.reference.logits),
                        softargmax_cell_coords(f.query.logits), map);
  return f;
}

PairPrediction predict_pair(const Model& model, const FeatureGrid& query,
                            const FeatureGrid& reference, const HilbertMap& map,
                            double match_threshold) {
  Tape tape;
  const ModelVars vars = bind_model(tape, model, false, false);
  const PairForward f = forward_pair(vars, model, query, reference, map);
  PairPrediction p;
  p.match = {f.match.logits.value(), f.match.probs.value(), f.match.weights.value(),
             f.match.soft.value()};
  p.soft.rows = map.rows();
  p.soft.cols = map.cols();
  p.soft.query_kp = f.soft.query_kp.value();
  p.soft.reference_kp = f.soft.reference_kp.value();
  p.soft.weights = f.soft.weights.value();
  p.matches = hard_matches(p.soft, p.match, match_threshold);
  return p;
}

std::vector<Correspondence2D3D> lift_matches(const std::vector<Match>& matches,
                                             const View& reference) {
  std::vector<Correspondence2D3D> out;
  for (const Match& m : matches) {
    const auto sample = sample_depth(reference.depth, reference.intrinsics, m.reference_px);
    if (!sample) continue;
    out.push_back({m.query_px, backproject(m.reference_px, sample->distance, reference.intrinsics),
                   m.weight});
  }
  return out;
}

double inlier_ratio(const std::vector<Match>& matches, const View& reference,
                    const Pose& truth, double inlier_px) {
  if (matches.empty()) return 0.0;
  std::size_t inliers = 0;
  for (const Match& m : matches) {
    const auto sample = sample_depth(reference.depth, reference.intrinsics, m.reference_px);
    if (!sample) continue;
    const Eigen::Vector3d x =
        truth.apply(backproject(m.reference_px, sample->distance, reference.intrinsics));
    if (!(x.z() > 0.0)) continue;
    if ((project(x, reference.intrinsics) - m.query_px).norm() <= inlier_px) ++inliers;
  }
  return static_cast<double>(inliers) / static_cast<double>(matches.size());
}

PairMetrics evaluate_pair(const std::vector<View>& views, const ScenePair& pair,
                          const Model& model, const HilbertMap& map, const EvalOptions& options) {
  const View& q = views.at(pair.query);
  const View& r = views.at(pair.reference);
  PairMetrics m;
  m.pair_id = q.id + ":" + r.id;
  std::vector<Match> matches;
  if (options.matcher == Matcher::kBaseline) {
    matches = baseline_argmax_matching(q.features, r.features, options.baseline_ratio);
  } else {
    matches = predict_pair(model, q.features, r.features, map, options.match_threshold).matches;
  }
  m.matches = matches.size();
  m.inlier_ratio = inlier_ratio(matches, r, pair.relative_pose, options.inlier_px);
  const auto corrs = lift_matches(matches, r);
  try {
    RansacOptions ro = options.ransac;
    ro.inlier_px = options.inlier_px;
    const RansacResult rr = ransac_pose(corrs, q.intrinsics, ro);
    std::vector<Correspondence2D3D> inliers;
    for (std::size_t k = 0; k < corrs.size(); ++k) {
      if (rr.inliers[k]) inliers.push_back(corrs[k]);
    }
    const Pose refined = lm_refine(rr.pose, inliers, q.intrinsics, options.lm_iters);
    const PoseError e = pose_error(refined, pair.relative_pose);
    m.estimated = true;
    m.rot_err_deg = e.rotation_deg;
    m.trans_err_m = e.translation_m;
  } catch (const NoPoseError&) {
    m.estimated = false;
  }
  return m;
}

std::vector<PairMetrics> evaluate_pairs(const std::vector<View>& views,
                                        const std::vector<ScenePair>& pairs, const Model& model,
                                        const HilbertMap& map, const EvalOptions& options) {
  std::vector<PairMetrics> out;
  out.reserve(pairs.size());
  for (const ScenePair& p : pairs) out.push_back(evaluate_pair(views, p, model, map, options));
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

MetricsSummary summarize(const std::vector<PairMetrics>& metrics) {
  MetricsSummary s;
  s.count = metrics.size();
  std::vector<double> rot, trans;
  double ratio_sum = 0.0;
  for (const PairMetrics& m : metrics) {
    ratio_sum += m.inlier_ratio;
    if (!m.estimated) continue;
    rot.push_back(m.rot_err_deg);
    trans.push_back(m.trans_err_m);
  }
  s.estimated = rot.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  s.mean_inlier_ratio = s.count ? ratio_sum / static_cast<double>(s.count) : 0.0;
  s.n_pct = s.count ? 100.0 * static_cast<double>(s.estimated) / static_cast<double>(s.count)
                    : 0.0;
  auto mean = [&](const std::vector<double>& v) {
    if (v.empty()) return nan;
    double t = 0.0;
    for (double x : v) t += x;
    return t / static_cast<double>(v.size());
  };
  s.r_a = mean(rot);
  s.t_a = mean(trans);
  s.r_m = median(rot);
  s.t_m = median(trans);
  return s;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<PairMetrics>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "pair_id,inlier_ratio,rot_err_deg,trans_err_m,estimated\n";
  char buf[128];
  for (const PairMetrics& m : rows) {
    if (m.estimated) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", m.inlier_ratio, m.rot_err_deg,
                    m.trans_err_m);
    } else {
      std::snprintf(buf, sizeof buf, "%.17g,nan,nan", m.inlier_ratio);
    }
    out << m.pair_id << ',' << buf << ',' << (m.estimated ? 1 : 0) << '\n';
  }
}

}  // namespace relpose
