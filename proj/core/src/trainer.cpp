#include "relpose/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "relpose/errors.hpp"
#include "relpose/random.hpp"

namespace relpose {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw RangeError("learning_rate must be >= 0");
  if (batch_size == 0) throw RangeError("batch_size must be >= 1");
  if (!(phase1_fraction >= 0.0 && phase1_fraction <= 1.0)) {
    throw RangeError("phase1_fraction must lie in [0, 1]");
  }
  if (adaptation_period_epochs == 0) throw RangeError("adaptation period must be >= 1");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw RangeError("ADAM betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw RangeError("ADAM epsilon must be positive");
  if (!(clip_norm >= 0.0)) throw RangeError("clip_norm must be >= 0");
}

std::size_t TrainConfig::phase1_epochs() const {
  if (!phase1_freeze_keypoints) return 0;
  return static_cast<std::size_t>(std::llround(phase1_fraction * static_cast<double>(epochs)));
}

TrainConfig train_config_from_json(const std::string& text) {
  using Json = nlohmann::json;
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed training config: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("training config must be a JSON object");
  TrainConfig c;
  try {
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("learning_rate", c.learning_rate);
    take("batch_size", c.batch_size);
    take("epochs", c.epochs);
    take("phase1_freeze_keypoints", c.phase1_freeze_keypoints);
    take("phase1_fraction", c.phase1_fraction);
    take("adaptation_period_epochs", c.adaptation_period_epochs);
    take("clip_norm", c.clip_norm);
    take("seed", c.seed);
    take("beta1", c.adam.beta1);
    take("beta2", c.adam.beta2);
    take("epsilon", c.adam.epsilon);
    take("kappa", c.hyper.kappa);
    take("tau", c.hyper.tau);
    take("alpha", c.hyper.alpha);
    take("beta", c.hyper.beta);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               OptimizerState& state, double learning_rate, const AdamConfig& adam,
               const std::vector<double>& multipliers) {
  if (grads.size() != params.size() ||
      (!multipliers.empty() && multipliers.size() != params.size())) {
    throw ShapeError("ADAM: parameter, gradient and multiplier counts differ");
  }
  if (state.m.empty() && state.v.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape(), 0.0);
      state.v.emplace_back(p->shape(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("ADAM: optimizer state does not match the parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].shape() != params[k]->shape() || state.m[k].shape() != params[k]->shape() ||
        state.v[k].shape() != params[k]->shape()) {
      throw ShapeError("ADAM: shape mismatch for parameter " + std::to_string(k));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double mult = multipliers.empty() ? 1.0 : multipliers[k];
    if (mult == 0.0) continue;
    Tensor& p = *params[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    const Tensor& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g[i];
      v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= mult * learning_rate * mhat / (std::sqrt(vhat) + adam.epsilon);
    }
  }
}

PairLoss pair_loss(const ModelVars& vars, const Model& model, const View& query,
                   const View& reference, const ScenePair& pair, const HilbertMap& map,
                   const KeypointLabels& query_labels, const KeypointLabels& reference_labels,
                   const LossHyper& hyper) {
  const PairForward f = forward_pair(vars, model, query.features, reference.features, map);
  const PairGeometry geometry{&reference.depth, query.intrinsics, pair.relative_pose};
  PairLoss l;
  l.pose = pose_loss(f.soft, geometry);
  l.inliers = inlier_loss(f.soft, geometry, hyper);
  l.keypoints = keypoint_ce_loss(f.query.logits, query_labels, f.reference.logits,
                                 reference_labels);
  l.total = total_loss(l.pose, l.inliers, l.keypoints, hyper);
  return l;
}

TrainResult train(const TrainData& data, Model model, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (!data.views || !data.map || data.pairs.empty()) {
    throw DataError("training needs at least one pair");
  }
  const std::vector<View>& views = *data.views;
  TrainResult result;
  OptimizerState state;
  Random rng(config.seed);
  std::vector<std::size_t> order(data.pairs.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;

  std::vector<std::string> names;
  for (const auto& p : model_parameters(model)) names.push_back(p.name);
  std::vector<KeypointLabels> labels;
  const std::size_t phase1 = config.phase1_epochs();
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (epoch % config.adaptation_period_epochs == 0) {
      const KeypointHead head = model.head;
      labels = scene_adaptation_targets(views, data.pairs, [&head](const View& v) {
        return apply_keypoint_head(v.features, head);
      });
      result.adaptations.push_back({epoch, label_hash(labels)});
    }
    const bool freeze_head = epoch < phase1;
    std::vector<double> multipliers;
    for (const std::string& n : names) {
      multipliers.push_back(freeze_head && is_keypoint_parameter(n) ? 0.0 : 1.0);
    }
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);

    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<Tensor> grads;
      LossBreakdown mean;
      for (std::size_t b = begin; b < end; ++b) {
        const ScenePair& pair = data.pairs[order[b]];
        Tape tape;
        const ModelVars vars = bind_model(tape, model, true, !freeze_head);
        const PairLoss l = pair_loss(vars, model, views.at(pair.query), views.at(pair.reference),
                                     pair, *data.map, labels.at(pair.query),
                                     labels.at(pair.reference), config.hyper);
        tape.backward(l.total);
        std::vector<Tensor> g = collect_gradients(vars, model);
        if (grads.empty()) {
          grads = std::move(g);
        } else {
          for (std::size_t p = 0; p < grads.size(); ++p) {
            for (std::size_t i = 0; i < grads[p].size(); ++i) grads[p][i] += g[p][i];
          }
        }
        mean.pose += l.pose.value().item();
        mean.inliers += l.inliers.value().item();
        mean.keypoints += l.keypoints.value().item();
        mean.total += l.total.value().item();
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      double norm2 = 0.0;
      for (Tensor& g : grads) {
        for (double& x : g.data()) {
          x *= inv;
          norm2 += x * x;
        }
      }
      const double norm = std::sqrt(norm2);
      if (config.clip_norm > 0.0 && norm > config.clip_norm) {
        const double s = config.clip_norm / norm;
        for (Tensor& g : grads) {
          for (double& x : g.data()) x *= s;
        }
      }
      std::vector<Tensor*> params;
      for (const auto& p : model_parameters(model)) params.push_back(p.value);
      adam_step(params, grads, state, config.learning_rate, config.adam, multipliers);
      mean.pose *= inv;
      mean.inliers *= inv;
      mean.keypoints *= inv;
      mean.total *= inv;
      mean.hyper = config.hyper;
      result.log.push_back({step++, mean});
    }
    if (on_epoch) on_epoch(epoch, model);
  }
  result.model = std::move(model);
  return result;
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "step,pose,inliers,keypoints,total\n";
  char buf[160];
  for (const TrainLogRow& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.step, r.loss.pose,
                  r.loss.inliers, r.loss.keypoints, r.loss.total);
    out << buf;
  }
}

std::vector<double> smoothed_total(const std::vector<TrainLogRow>& log, std::size_t window) {
  std::vector<double> out;
  double sum = 0.0;
  for (std::size_t k = 0; k < log.size(); ++k) {
    sum += log[k].loss.total;
    if (k >= window) sum -= log[k - window].loss.total;
    out.push_back(sum / static_cast<double>(std::min(k + 1, window)));
  }
  return out;
}

}  // namespace relpose
