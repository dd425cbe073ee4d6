#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "relpose/hilbert.hpp"
#include "relpose/losses.hpp"
#include "relpose/pipeline.hpp"
#include "relpose/scene.hpp"

namespace relpose {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  double learning_rate = 1e-5;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  bool phase1_freeze_keypoints = true;
  double phase1_fraction = 0.5;  // share of epochs in phase 1
  std::size_t adaptation_period_epochs = 20;
  AdamConfig adam;
  double clip_norm = 10.0;  // global gradient norm; 0 disables clipping
  LossHyper hyper;
  std::uint64_t seed = 0;

  // Throws RangeError on invalid values.
  void validate() const;
  std::size_t phase1_epochs() const;
};

// Every field optional; defaults from TrainConfig{}.
TrainConfig train_config_from_json(const std::string& text);

struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

// Bias-corrected ADAM update. A parameter whose multiplier is 0 is skipped
// entirely (value and moments untouched); `multipliers` may be empty for
// all ones. The step counter increments once per call. Throws ShapeError
// when parameters, gradients and moments disagree.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               OptimizerState& state, double learning_rate, const AdamConfig& adam,
               const std::vector<double>& multipliers = {});

struct TrainLogRow {
  std::size_t step = 0;
  LossBreakdown loss;  // mean over the pairs of the step
};

struct AdaptationRecord {
  std::size_t epoch = 0;
  std::uint64_t label_hash = 0;
};

struct TrainResult {
  Model model;
  std::vector<TrainLogRow> log;
  std::vector<AdaptationRecord> adaptations;
};

/// Data of one training run: views with poses and depth, the pairs to
/// train on, and the curve matching the views' grid.
struct TrainData {
  const std::vector<View>* views = nullptr;
  std::vector<ScenePair> pairs;
  const HilbertMap* map = nullptr;
};

// Loss of one pair with tape-attached model parameters.
struct PairLoss {
  Var pose;
  Var inliers;
  Var keypoints;
  Var total;
};
PairLoss pair_loss(const ModelVars& vars, const Model& model, const View& query,
                   const View& reference, const ScenePair& pair, const HilbertMap& map,
                   const KeypointLabels& query_labels, const KeypointLabels& reference_labels,
                   const LossHyper& hyper);

using EpochCallback = std::function<void(std::size_t epoch, const Model& model)>;

// Two-phase ADAM training. Pairs are shuffled per epoch with the seeded
// generator; within a step the per-pair gradients are averaged in batch
// order. Phase 1 freezes the keypoint head when configured. Scene
// adaptation labels are recomputed at every multiple of
// adaptation_period_epochs. Throws DataError on empty data.
TrainResult train(const TrainData& data, Model model, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// step,pose,inliers,keypoints,total
void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& log);
// Window-`window` trailing moving averages of the total loss.
std::vector<double> smoothed_total(const std::vector<TrainLogRow>& log, std::size_t window = 10);

}  // namespace relpose
