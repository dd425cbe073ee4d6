#include "relpose/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "relpose/errors.hpp"
#include "relpose/random.hpp"
#include "relpose/scene.hpp"
#include "relpose/trainer.hpp"

namespace relpose {

double gradient_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

double central_difference(const std::function<double()>& f, double& entry, double step) {
  const double saved = entry;
  entry = saved + step;
  const double up = f();
  entry = saved - step;
  const double down = f();
  entry = saved;
  return (up - down) / (2.0 * step);
}

GradCheckReport run_grad_check(const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  SynthConfig sc;
  sc.grid_h = options.grid_h;
  sc.grid_w = options.grid_w;
  sc.view_count = 8;
  sc.landmark_count = 120;
  sc.descriptor_noise_sigma = 0.3;
  sc.outlier_fraction = 0.3;
  sc.seed = options.seed;
  const Scene scene = generate_scene(sc);
  const ScenePair& pair = scene.pairs.front();
  const View& query = scene.views[pair.query];
  const View& reference = scene.views[pair.reference];
  const HilbertMap map = build_pseudo_hilbert(options.grid_h, options.grid_w);

  Random rng(options.seed ^ 0x9e3779b97f4a7c15ull);
  Model model{MatchLayerParams::random(options.widths, rng.bits(), 3.0), KeypointHead{}};
  // Larger than the training initialization so every layer carries signal.
  for (auto& p : model.match.tensors()) {
    if (p.name.ends_with(".kernel")) {
      for (double& v : p.value.data()) v *= 10.0;
    } else if (p.name.ends_with(".slope")) {
      for (double& v : p.value.data()) v = rng.uniform(0.1, 0.4);
    }
  }
  model.match.get("dustbin_bias")[0] = 0.5;
  for (double& v : model.head.scale.data()) v = rng.uniform(0.8, 1.2);
  for (double& v : model.head.bias.data()) v = rng.uniform(-0.2, 0.2);

  const auto labels = scene_adaptation_targets(scene.views, scene.pairs, [](const View& v) {
    return v.features;
  });
  const LossHyper hyper;
  auto loss_of = [&](const Model& m) {
    Tape tape;
    const ModelVars vars = bind_model(tape, m, false, false);
    return pair_loss(vars, m, query, reference, pair, map, labels[pair.query],
                     labels[pair.reference], hyper)
        .total.value()
        .item();
  };

  GradCheckReport report;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    const ModelVars vars = bind_model(tape, model);
    const PairLoss l = pair_loss(vars, model, query, reference, pair, map, labels[pair.query],
                                 labels[pair.reference], hyper);
    tape.backward(l.total);
    analytic = collect_gradients(vars, model);
    report.loss = l.total.value().item();
  }

  auto params = model_parameters(model);
  std::size_t total = 0;
  for (const auto& p : params) total += p.value->size();
  for (std::size_t k = 0; k < options.probes; ++k) {
    std::size_t flat = rng.index(total);
    std::size_t which = 0;
    while (flat >= params[which].value->size()) flat -= params[which++].value->size();
    double& entry = (*params[which].value)[flat];
    const double numeric =
        central_difference([&] { return loss_of(model); }, entry, options.step);
    GradProbe probe{params[which].name, flat, analytic[which][flat], numeric, 0.0};
    probe.relative_error = gradient_relative_error(probe.analytic, probe.numeric);
    report.max_relative_error = std::max(report.max_relative_error, probe.relative_error);
    report.probes.push_back(probe);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace relpose
