#include "relpose/match_layer.hpp"

#include <cmath>

#include "relpose/errors.hpp"
#include "relpose/ops.hpp"
#include "relpose/random.hpp"

namespace relpose {

std::map<std::string, Var> bind_params(Tape& tape, const ParamList& params,
                                       bool requires_grad) {
  std::map<std::string, Var> out;
  for (const auto& p : params) out.emplace(p.name, tape.leaf(p.value, requires_grad));
  return out;
}

namespace {

Shape kernel_shape(std::size_t k, std::size_t cin, std::size_t cout) {
  return {k, k, k, cin, cout};
}

std::string stage_name(const char* kind, std::size_t s, const char* what) {
  return std::string(kind) + std::to_string(s) + "." + what;
}

}  // namespace

MatchLayerParams::MatchLayerParams(std::vector<std::size_t> widths, std::size_t kernel)
    : widths_(std::move(widths)), kernel_(kernel) {
  if (widths_.empty()) throw ShapeError("matching layer needs at least one stage");
  if (kernel_ % 2 == 0) throw ShapeError("matching layer kernel size must be odd");
  for (std::size_t w : widths_) {
    if (w == 0) throw ShapeError("matching layer widths must be positive");
  }
  const std::size_t k = kernel_;
  for (std::size_t s = 0; s < widths_.size(); ++s) {
    const std::size_t cin = s == 0 ? 1 : widths_[s - 1];
    tensors_.push_back({stage_name("enc", s, "kernel"), Tensor(kernel_shape(k, cin, widths_[s]))});
    tensors_.push_back({stage_name("enc", s, "slope"), Tensor(Shape{widths_[s]})});
  }
  for (std::size_t s = widths_.size() - 1; s >= 1; --s) {
    const std::size_t lo = widths_[s - 1];
    tensors_.push_back({stage_name("up", s, "kernel"), Tensor(kernel_shape(k, widths_[s], lo))});
    tensors_.push_back({stage_name("up", s, "slope"), Tensor(Shape{lo})});
    tensors_.push_back({stage_name("dec", s - 1, "kernel"), Tensor(kernel_shape(k, lo, lo))});
    tensors_.push_back({stage_name("dec", s - 1, "slope"), Tensor(Shape{lo})});
  }
  tensors_.push_back({"head.kernel", Tensor(kernel_shape(1, widths_[0], 1))});
  tensors_.push_back({"input_gain", Tensor::scalar(0.0)});
  tensors_.push_back({"dustbin_bias", Tensor::scalar(0.0)});
}

MatchLayerParams MatchLayerParams::random(std::vector<std::size_t> widths,
                                          std::uint64_t seed, double input_gain,
                                          std::size_t kernel) {
  MatchLayerParams p(std::move(widths), kernel);
  Random rng(seed);
  for (auto& [name, value] : p.tensors_) {
    if (name.ends_with(".slope")) {
      value.fill(0.25);
    } else if (name.ends_with(".kernel")) {
      const Shape& s = value.shape();
      const double fan_in = static_cast<double>(s[0] * s[1] * s[2] * s[3]);
      // Small weights keep the initial logits close to input_gain * volume.
      const double stddev = 0.1 * std::sqrt(2.0 / fan_in);
      for (double& v : value.data()) v = stddev * rng.normal();
    }
  }
  p.get("input_gain")[0] = input_gain;
  return p;
}

Tensor& MatchLayerParams::get(const std::string& name) {
  for (auto& p : tensors_) {
    if (p.name == name) return p.value;
  }
  throw ContractError("unknown matching-layer parameter: " + name);
}

const Tensor& MatchLayerParams::get(const std::string& name) const {
  return const_cast<MatchLayerParams*>(this)->get(name);
}

std::size_t MatchLayerParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : tensors_) n += p.value.size();
  return n;
}

bool operator==(const MatchLayerParams& a, const MatchLayerParams& b) {
  if (a.widths_ != b.widths_ || a.kernel_ != b.kernel_ ||
      a.tensors_.size() != b.tensors_.size()) {
    return false;
  }
  for (std::size_t k = 0; k < a.tensors_.size(); ++k) {
    if (a.tensors_[k].name != b.tensors_[k].name ||
        !(a.tensors_[k].value == b.tensors_[k].value)) {
      return false;
    }
  }
  return true;
}

namespace {

const Var& param(const std::map<std::string, Var>& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ContractError("missing matching-layer parameter: " + name);
  return it->second;
}

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

Var matching_logits(const Var& volume, const std::map<std::string, Var>& params,
                    const std::vector<std::size_t>& widths) {
  const Shape& vs = volume.shape();
  if (vs.size() != 3 || vs[2] != vs[0] * vs[1] + 1) {
    throw ShapeError("matching layer expects a [h,w,h*w+1] volume, got " +
                     shape_to_string(vs));
  }
  const std::size_t stages = widths.size();
  if (stages == 0) throw ShapeError("matching layer needs at least one stage");
  const std::size_t mult = std::size_t{1} << (stages - 1);
  const Shape in_shape{vs[0], vs[1], vs[2], 1};
  const Shape padded{round_up(vs[0], mult), round_up(vs[1], mult), round_up(vs[2], mult), 1};

  Var x = ops::pad_to(ops::reshape(volume, in_shape), padded);
  std::vector<Var> enc;
  for (std::size_t s = 0; s < stages; ++s) {
    const Var& input = s == 0 ? x : enc.back();
    Var y = ops::conv3d(input, param(params, stage_name("enc", s, "kernel")), s == 0 ? 1 : 2);
    enc.push_back(ops::prelu(y, param(params, stage_name("enc", s, "slope"))));
  }
  Var y = enc.back();
  for (std::size_t s = stages - 1; s >= 1; --s) {
    const Shape& skip = enc[s - 1].shape();
    Var up = ops::transposed_conv3d(y, param(params, stage_name("up", s, "kernel")),
                                    {skip[0], skip[1], skip[2]}, 2);
    up = ops::prelu(up, param(params, stage_name("up", s, "slope")));
    y = ops::add(up, enc[s - 1]);
    y = ops::conv3d(y, param(params, stage_name("dec", s - 1, "kernel")), 1);
    y = ops::prelu(y, param(params, stage_name("dec", s - 1, "slope")));
  }
  Var head = ops::conv3d(y, param(params, "head.kernel"), 1);
  head = ops::reshape(ops::crop(head, in_shape), vs);
  Var logits = ops::add(head, ops::scale_by(volume, param(params, "input_gain")));
  return ops::add_channel_bias(logits, vs[2] - 1, param(params, "dustbin_bias"));
}

MatchMapVars match_map(const Var& logits, SoftMatchNormalization norm) {
  const std::size_t channels = logits.shape().at(2);
  const std::size_t n = channels - 1;
  MatchMapVars m;
  m.logits = logits;
  m.probs = ops::softmax_axis(logits, 2);
  Var dustbin = ops::reshape(ops::slice(m.probs, 2, n, channels),
                             {logits.shape()[0], logits.shape()[1]});
  m.weights = ops::affine(dustbin, -1.0, 1.0);
  m.soft = norm == SoftMatchNormalization::kExcludeDustbin
               ? ops::softmax_axis(logits, 2, ops::ChannelRange{0, n})
               : ops::slice(m.probs, 2, 0, n);
  return m;
}

MatchMapVars matching_forward(const Var& volume, const std::map<std::string, Var>& params,
                              const std::vector<std::size_t>& widths,
                              SoftMatchNormalization norm) {
  return match_map(matching_logits(volume, params, widths), norm);
}

MatchMap matching_forward(const CorrelationVolume& volume, const MatchLayerParams& params,
                          SoftMatchNormalization norm) {
  Tape tape;
  MatchMapVars m = matching_forward(tape.constant(volume.values),
                                    bind_params(tape, params.tensors(), false),
                                    params.widths(), norm);
  return {m.logits.value(), m.probs.value(), m.weights.value(), m.soft.value()};
}

SoftMatchVars soft_matches(const MatchMapVars& match, const Var& reference_kp,
                           const Var& query_kp, const HilbertMap& map) {
  const Shape& ss = match.soft.shape();
  const std::size_t h = map.rows(), w = map.cols(), n = map.size();
  if (ss != Shape{h, w, n} || reference_kp.shape() != Shape{h, w, 2} ||
      query_kp.shape() != Shape{h, w, 2}) {
    throw ShapeError("soft_matches: match map, keypoints and curve disagree");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < n; ++k) order[k] = map.cell(k).i * w + map.cell(k).j;
  // Reference keypoints listed in curve order, one coordinate per vector.
  Var along_curve = ops::gather_rows(ops::reshape(reference_kp, {n, 2}), order);
  std::vector<Var> coords;
  for (std::size_t axis = 0; axis < 2; ++axis) {
    Var c = ops::reshape(ops::slice(along_curve, 1, axis, axis + 1), {n});
    coords.push_back(ops::reduce(ops::Reduce::kWeightedSum, match.soft, {2}, c));
  }
  return {query_kp, ops::stack_last(coords), match.weights};
}

SoftCorrespondenceSet soft_matches(const MatchMap& match, const Tensor& reference_kp,
                                   const Tensor& query_kp, const HilbertMap& map) {
  Tape tape;
  MatchMapVars m{tape.constant(match.logits), tape.constant(match.probs),
                 tape.constant(match.weights), tape.constant(match.soft)};
  SoftMatchVars s =
      soft_matches(m, tape.constant(reference_kp), tape.constant(query_kp), map);
  SoftCorrespondenceSet out;
  out.rows = map.rows();
  out.cols = map.cols();
  out.query_kp = s.query_kp.value();
  out.reference_kp = s.reference_kp.value();
  out.weights = s.weights.value();
  return out;
}

std::vector<Match> hard_matches(const SoftCorrespondenceSet& set, const MatchMap& match,
                                double weight_threshold) {
  if (!(weight_threshold >= 0.0)) throw RangeError("weight threshold must be >= 0");
  const Tensor& weights = match.weights.size() == set.weights.size() ? match.weights
                                                                       : set.weights;
  std::vector<Match> out;
  for (std::size_t i = 0; i < set.rows; ++i) {
    for (std::size_t j = 0; j < set.cols; ++j) {
      const std::size_t c = i * set.cols + j;
      if (weights[c] < weight_threshold) continue;
      Match m;
      m.query_cell = {i, j};
      m.query_px = {set.query_kp[2 * c], set.query_kp[2 * c + 1]};
      m.reference_px = {set.reference_kp[2 * c], set.reference_kp[2 * c + 1]};
      m.weight = weights[c];
      out.push_back(m);
    }
  }
  return out;
}

}  // namespace relpose
