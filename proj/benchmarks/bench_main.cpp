#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "relpose/autodiff.hpp"
#include "relpose/correlation.hpp"
#include "relpose/hilbert.hpp"
#include "relpose/match_layer.hpp"
#include "relpose/ops.hpp"
#include "relpose/p3p.hpp"
#include "relpose/ransac.hpp"
#include "relpose/scene.hpp"

namespace relpose {
namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(shape);
  for (double& v : t.storage()) v = u(rng);
  return t;
}

CameraIntrinsics desk_camera() {
  CameraIntrinsics k;
  k.fx = k.fy = 57.6;
  k.cx = k.cy = 31.5;
  return k;
}

// Noiseless correspondences under a fixed pose, the first `outliers` of
// them shifted by 20 px.
std::vector<Correspondence2D3D> correspondences(std::size_t n, std::size_t outliers) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const CameraIntrinsics k = desk_camera();
  const Pose truth(Eigen::Quaterniond(Eigen::AngleAxisd(0.2, Eigen::Vector3d::UnitY())),
                   Eigen::Vector3d(0.3, -0.1, 0.2));
  std::vector<Correspondence2D3D> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    out[j].image_point = Eigen::Vector2d(63.0 * u(rng), 63.0 * u(rng));
    out[j].world_point =
        truth.inverse().apply(backproject(out[j].image_point, 2.0 + 6.0 * u(rng), k));
    if (j < outliers) out[j].image_point += Eigen::Vector2d(20.0, -20.0);
  }
  return out;
}

void BM_Conv3dForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({n, n, n * n + 1, 4}, 1);
  const Tensor k = random_tensor({3, 3, 3, 4, 8}, 2);
  for (auto _ : state) {
    Tape tape;
    const Var y = ops::conv3d(tape.leaf(x), tape.leaf(k), 2);
    tape.backward(ops::sum(y));
    benchmark::DoNotOptimize(y.value().storage().data());
  }
}
BENCHMARK(BM_Conv3dForwardBackward)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_MatchingForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  SynthConfig c;
  c.grid_h = c.grid_w = n;
  c.view_count = 4;
  c.seed = 5;
  const Scene scene = generate_scene(c);
  const HilbertMap map = build_pseudo_hilbert(n, n);
  const MatchLayerParams params = MatchLayerParams::random({4, 8, 16}, 7);
  const ScenePair& pair = scene.pairs.front();
  for (auto _ : state) {
    const CorrelationVolume volume = correlation_volume(
        scene.views[pair.query].features, scene.views[pair.reference].features, map);
    const MatchMap m = matching_forward(volume, params);
    benchmark::DoNotOptimize(&m);
  }
}
BENCHMARK(BM_MatchingForward)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_P3P(benchmark::State& state) {
  const auto cs = correspondences(3, 0);
  const CameraIntrinsics k = desk_camera();
  for (auto _ : state) benchmark::DoNotOptimize(p3p_solve(cs[0], cs[1], cs[2], k));
}
BENCHMARK(BM_P3P);

void BM_Ransac(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto cs = correspondences(n, n * static_cast<std::size_t>(state.range(1)) / 100);
  const CameraIntrinsics k = desk_camera();
  RansacOptions opt;
  opt.seed = 1;
  for (auto _ : state) benchmark::DoNotOptimize(ransac_pose(cs, k, opt).inlier_count);
}
BENCHMARK(BM_Ransac)->Args({64, 24})->Args({64, 63})->Unit(benchmark::kMicrosecond);

void BM_PseudoHilbert(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto cols = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(build_pseudo_hilbert(rows, cols).size());
}
BENCHMARK(BM_PseudoHilbert)->Args({15, 20})->Args({64, 64});

}  // namespace
}  // namespace relpose

BENCHMARK_MAIN();
