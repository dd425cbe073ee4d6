#include "relpose/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "relpose/errors.hpp"
#include "relpose/random.hpp"

namespace relpose {

void SynthConfig::validate() const {
  if (grid_h == 0 || grid_w == 0) throw RangeError("grid dimensions must be positive");
  if (view_count < 2) throw RangeError("need at least two views");
  if (landmark_count == 0) throw RangeError("need at least one landmark");
  if (descriptor_dim == 0) throw RangeError("descriptor_dim must be positive");
  if (!(descriptor_noise_sigma >= 0.0)) throw RangeError("descriptor noise must be >= 0");
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0)) {
    throw RangeError("outlier_fraction must lie in [0, 1)");
  }
  if (!(depth_min > 0.0 && depth_max > depth_min)) {
    throw RangeError("need 0 < depth_min < depth_max");
  }
  if (!(baseline_max >= 0.0) || !(rotation_max_deg >= 0.0)) {
    throw RangeError("baseline and rotation ranges must be >= 0");
  }
  if (max_pairs_per_query == 0) throw RangeError("max_pairs_per_query must be positive");
}

Eigen::Vector3d camera_center(const Pose& global_pose) {
  return -(global_pose.rotation().conjugate() * global_pose.translation());
}

ScenePair make_pair(const std::vector<View>& views, std::size_t query, std::size_t reference) {
  ScenePair p;
  p.query = query;
  p.reference = reference;
  p.relative_pose = relative_pose(views.at(query).global_pose, views.at(reference).global_pose);
  return p;
}

namespace {

struct ImageExtent {
  double h = 0.0;
  double w = 0.0;
};

ImageExtent extent(const View& v) {
  if (v.features.image_h > 0) {
    return {static_cast<double>(v.features.image_h), static_cast<double>(v.features.image_w)};
  }
  return {static_cast<double>(v.depth.height()), static_cast<double>(v.depth.width())};
}

bool inside_frustum(const View& v, const Eigen::Vector3d& world, double max_range) {
  const Eigen::Vector3d x = v.global_pose.apply(world);
  if (!(x.z() > 0.0) || x.z() > max_range) return false;
  const Eigen::Vector2d px = project(x, v.intrinsics);
  const ImageExtent e = extent(v);
  return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= e.h - 1.0 && px.y() <= e.w - 1.0;
}

std::size_t lattice_hits(const View& from, const View& to, double max_range,
                         std::size_t lattice) {
  const ImageExtent e = extent(from);
  const Pose world_from_camera = from.global_pose.inverse();
  const double steps = static_cast<double>(std::max<std::size_t>(lattice, 2) - 1);
  std::size_t hits = 0;
  for (std::size_t a = 0; a < lattice; ++a) {
    for (std::size_t b = 0; b < lattice; ++b) {
      const Eigen::Vector2d px{(e.h - 1.0) * static_cast<double>(a) / steps,
                               (e.w - 1.0) * static_cast<double>(b) / steps};
      const Eigen::Vector3d ray = from.intrinsics.unproject(px);
      for (std::size_t d = 0; d < lattice; ++d) {
        const double z = max_range * static_cast<double>(d + 1) / static_cast<double>(lattice);
        if (inside_frustum(to, world_from_camera.apply(ray * z), max_range)) ++hits;
      }
    }
  }
  return hits;
}

}  // namespace

double frustum_overlap(const View& a, const View& b, double max_range_m, std::size_t lattice) {
  if (lattice == 0) throw RangeError("lattice size must be positive");
  const double total = 2.0 * static_cast<double>(lattice * lattice * lattice);
  return static_cast<double>(lattice_hits(a, b, max_range_m, lattice) +
                             lattice_hits(b, a, max_range_m, lattice)) /
         total;
}

bool compatible_pair(const View& a, const View& b, double max_dist_m, double max_range_m) {
  const double dist = (camera_center(a.global_pose) - camera_center(b.global_pose)).norm();
  if (dist > max_dist_m) return false;
  return frustum_overlap(a, b, max_range_m) > 0.0;
}

bool nontrivial_pair(const ScenePair& pair, double min_t_m, double min_r_deg) {
  const bool close_t = pair.relative_pose.translation().norm() <= min_t_m;
  const bool close_r = rotation_angle_deg(pair.relative_pose) <= min_r_deg;
  return !(close_t && close_r);
}

namespace {

constexpr double kPanelHalfWidth = 0.6;
constexpr double kGenuineConfidenceLo = 0.8;
constexpr double kGenuineConfidenceHi = 0.98;
constexpr double kDistractorConfidenceLo = 0.35;
constexpr double kDistractorConfidenceHi = 0.65;
constexpr double kBackgroundConfidenceLo = 0.01;
constexpr double kBackgroundConfidenceHi = 0.1;
constexpr double kLogFloor = 1e-12;

struct Geometry {
  double wall_z;
  double panel_z;
};

// Distance along a unit world ray to the first surface, if any.
std::optional<double> cast_ray(const Geometry& g, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& dir) {
  if (!(dir.z() > 0.0)) return std::nullopt;
  std::optional<double> best;
  const double t_wall = (g.wall_z - origin.z()) / dir.z();
  if (t_wall > 0.0) best = t_wall;
  const double t_panel = (g.panel_z - origin.z()) / dir.z();
  if (t_panel > 0.0 && std::abs(origin.x() + t_panel * dir.x()) <= kPanelHalfWidth &&
      (!best || t_panel < *best)) {
    best = t_panel;
  }
  return best;
}

std::vector<double> random_unit(Random& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

// normalize(d + sigma * g / sqrt(dim)): the noise vector has norm ~sigma.
std::vector<double> noisy_copy(Random& rng, const std::vector<double>& d, double sigma) {
  std::vector<double> v(d);
  const double scale = sigma / std::sqrt(static_cast<double>(d.size()));
  double norm = 0.0;
  for (double& x : v) {
    x += scale * rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

Eigen::Matrix3d jitter_rotation(Random& rng, double max_deg) {
  const double k = max_deg * std::numbers::pi / 180.0;
  const double ax = rng.uniform(-k, k), ay = rng.uniform(-k, k), az = rng.uniform(-k, k);
  return (Eigen::AngleAxisd(az, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

DepthMap render_depth(const Geometry& g, const View& v, std::size_t h, std::size_t w) {
  DepthMap depth{Tensor(Shape{h, w})};
  const Eigen::Vector3d origin = camera_center(v.global_pose);
  const Eigen::Quaterniond world_from_camera = v.global_pose.rotation().conjugate();
  for (std::size_t x = 0; x < h; ++x) {
    for (std::size_t y = 0; y < w; ++y) {
      const Eigen::Vector3d ray =
          v.intrinsics.unproject({static_cast<double>(x), static_cast<double>(y)}).normalized();
      const auto t = cast_ray(g, origin, world_from_camera * ray);
      // Stored at file precision so in-memory and on-disk scenes agree.
      depth.values[x * w + y] = t ? static_cast<double>(static_cast<float>(*t)) : -1.0;
    }
  }
  return depth;
}

struct Observation {
  std::size_t landmark;
  Eigen::Vector2d px;
};

// Landmark projections that are unoccluded, inside the image and encodable
// as an integer sub-cell offset pair in [0, 7].
std::vector<Observation> visible_landmarks(const Geometry& g, const View& v,
                                           const std::vector<Eigen::Vector3d>& points,
                                           std::size_t h, std::size_t w) {
  std::vector<Observation> out;
  const Eigen::Vector3d origin = camera_center(v.global_pose);
  for (std::size_t l = 0; l < points.size(); ++l) {
    const Eigen::Vector3d x = v.global_pose.apply(points[l]);
    if (!(x.z() > 0.0)) continue;
    const Eigen::Vector2d px = project(x, v.intrinsics);
    if (!(px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= static_cast<double>(h) - 1.0 &&
          px.y() <= static_cast<double>(w) - 1.0)) {
      continue;
    }
    const double dist = (points[l] - origin).norm();
    const auto hit = cast_ray(g, origin, (points[l] - origin) / dist);
    if (!hit || std::abs(*hit - dist) > 1e-9 * dist) continue;
    const double m = px.x() - kCellSize * std::floor(px.x() / kCellSize);
    const double n = px.y() - kCellSize * std::floor(px.y() / kCellSize);
    if (m > kCellSize - 1.0 || n > kCellSize - 1.0) continue;
    out.push_back({l, px});
  }
  return out;
}

}  // namespace

Scene generate_scene(const SynthConfig& config) {
  config.validate();
  Random rng(config.seed);
  Scene scene;
  scene.config = config;
  const std::size_t h = config.grid_h * kCellSize, w = config.grid_w * kCellSize;
  const Geometry geometry{config.depth_max,
                          config.depth_min + 0.4 * (config.depth_max - config.depth_min)};
  CameraIntrinsics intrinsics;
  intrinsics.fx = intrinsics.fy = 0.9 * static_cast<double>(std::max(h, w));
  intrinsics.cx = (static_cast<double>(h) - 1.0) / 2.0;
  intrinsics.cy = (static_cast<double>(w) - 1.0) / 2.0;

  // Cameras.
  for (std::size_t k = 0; k < config.view_count; ++k) {
    const double b = config.baseline_max;
    const Eigen::Vector3d center{rng.uniform(-b, b), rng.uniform(-b, b),
                                 rng.uniform(-b / 2, b / 2)};
    const Eigen::Matrix3d world_from_camera = jitter_rotation(rng, config.rotation_max_deg);
    View v;
    char id[32];
    std::snprintf(id, sizeof id, "view_%03zu", k);
    v.id = id;
    v.intrinsics = intrinsics;
    v.global_pose = Pose(Eigen::Matrix3d(world_from_camera.transpose()),
                         Eigen::Vector3d(-(world_from_camera.transpose() * center)));
    scene.views.push_back(std::move(v));
  }

  // Landmarks on the wall and the panel.
  const double half_fov =
      std::atan((static_cast<double>(std::max(h, w)) / 2.0) / intrinsics.fx);
  const double wall_half = config.depth_max * std::tan(half_fov) + config.baseline_max;
  std::vector<Eigen::Vector3d> points;
  std::vector<std::vector<double>> descriptors;
  for (std::size_t l = 0; l < config.landmark_count; ++l) {
    Eigen::Vector3d p;
    if (rng.uniform() < 0.2) {
      p = {rng.uniform(-kPanelHalfWidth, kPanelHalfWidth), rng.uniform(-wall_half, wall_half),
           geometry.panel_z};
    } else {
      p = {rng.uniform(-wall_half, wall_half), rng.uniform(-wall_half, wall_half),
           geometry.wall_z};
    }
    points.push_back(p);
    descriptors.push_back(random_unit(rng, config.descriptor_dim));
  }

  for (View& v : scene.views) v.depth = render_depth(geometry, v, h, w);

  // Keep landmarks that at least two views can observe.
  std::vector<std::vector<Observation>> visible;
  std::vector<std::size_t> seen(points.size(), 0);
  for (const View& v : scene.views) {
    visible.push_back(visible_landmarks(geometry, v, points, h, w));
    for (const auto& o : visible.back()) ++seen[o.landmark];
  }
  std::vector<std::size_t> remap(points.size(), points.size());
  for (std::size_t l = 0; l < points.size(); ++l) {
    if (seen[l] < 2) continue;
    remap[l] = scene.landmarks.size();
    scene.landmarks.push_back({points[l], descriptors[l]});
  }
  if (scene.landmarks.empty()) throw GenerationError("no landmark is visible in two views");

  const std::size_t cells = config.grid_h * config.grid_w;
  const std::size_t dim = config.descriptor_dim;
  for (std::size_t vi = 0; vi < scene.views.size(); ++vi) {
    View& v = scene.views[vi];
    Tensor probs(Shape{config.grid_h, config.grid_w, kKeypointChannels}, 0.0);
    Tensor desc(Shape{config.grid_h, config.grid_w, dim});
    std::vector<bool> used(cells, false);
    auto set_descriptor = [&](std::size_t cell, const std::vector<double>& d) {
      std::copy(d.begin(), d.end(), desc.data().begin() + static_cast<std::ptrdiff_t>(cell * dim));
    };
    std::size_t genuine = 0;
    auto& observed = scene.observations.emplace_back();
    for (const Observation& o : visible[vi]) {
      if (remap[o.landmark] == points.size()) continue;
      const auto i = static_cast<std::size_t>(std::floor(o.px.x() / kCellSize));
      const auto j = static_cast<std::size_t>(std::floor(o.px.y() / kCellSize));
      const std::size_t cell = i * config.grid_w + j;
      if (used[cell]) continue;
      // The lifted point must agree with the rendered depth, which rules
      // out observations whose neighbourhood straddles the panel edge.
      const auto sample = sample_depth(v.depth, v.intrinsics, o.px);
      const double dist = (points[o.landmark] - camera_center(v.global_pose)).norm();
      if (!sample || std::abs(sample->distance - dist) > 1e-5 * dist) continue;
      used[cell] = true;
      ++genuine;
      observed.push_back({remap[o.landmark], o.px});
      const double m = o.px.x() - static_cast<double>(kCellSize * i);
      const double n = o.px.y() - static_cast<double>(kCellSize * j);
      const std::size_t m0 = std::min<std::size_t>(static_cast<std::size_t>(m), 7);
      const std::size_t n0 = std::min<std::size_t>(static_cast<std::size_t>(n), 7);
      const double fm = m - static_cast<double>(m0), fn = n - static_cast<double>(n0);
      const double conf = rng.uniform(kGenuineConfidenceLo, kGenuineConfidenceHi);
      double* p = probs.data().data() + cell * kKeypointChannels;
      p[m0 * kCellSize + n0] += conf * (1 - fm) * (1 - fn);
      if (fm > 0) p[(m0 + 1) * kCellSize + n0] += conf * fm * (1 - fn);
      if (fn > 0) p[m0 * kCellSize + n0 + 1] += conf * (1 - fm) * fn;
      if (fm > 0 && fn > 0) p[(m0 + 1) * kCellSize + n0 + 1] += conf * fm * fn;
      p[kNoKeypoint] = 1.0 - conf;
      set_descriptor(cell, noisy_copy(rng, scene.landmarks[remap[o.landmark]].descriptor,
                                      config.descriptor_noise_sigma));
    }

    std::vector<std::size_t> empty;
    for (std::size_t c = 0; c < cells; ++c) {
      if (!used[c]) empty.push_back(c);
    }
    for (std::size_t k = empty.size(); k > 1; --k) std::swap(empty[k - 1], empty[rng.index(k)]);
    const auto distractors = std::min<std::size_t>(
        empty.size(),
        static_cast<std::size_t>(std::llround(config.outlier_fraction * static_cast<double>(genuine) /
                                              (1.0 - config.outlier_fraction))));
    for (std::size_t k = 0; k < empty.size(); ++k) {
      const std::size_t cell = empty[k];
      double* p = probs.data().data() + cell * kKeypointChannels;
      if (k < distractors) {
        // A detector false positive whose descriptor resembles a real
        // landmark seen elsewhere.
        const double conf = rng.uniform(kDistractorConfidenceLo, kDistractorConfidenceHi);
        p[rng.index(kSubCellPositions)] = conf;
        p[kNoKeypoint] = 1.0 - conf;
        const auto& source = scene.landmarks[rng.index(scene.landmarks.size())].descriptor;
        set_descriptor(cell, noisy_copy(rng, source, config.descriptor_noise_sigma));
      } else {
        const double conf = rng.uniform(kBackgroundConfidenceLo, kBackgroundConfidenceHi);
        for (std::size_t c = 0; c < kSubCellPositions; ++c) p[c] = conf / kSubCellPositions;
        p[kNoKeypoint] = 1.0 - conf;
        set_descriptor(cell, random_unit(rng, dim));
      }
    }
    Tensor logits(probs.shape());
    for (std::size_t k = 0; k < probs.size(); ++k) {
      logits[k] = std::log(std::max(probs[k], kLogFloor));
    }
    v.features = normalize_grid(logits, desc);
  }

  for (std::size_t q = 0; q < scene.views.size(); ++q) {
    std::vector<ScenePair> candidates;
    for (std::size_t r = 0; r < scene.views.size(); ++r) {
      if (r == q) continue;
      if (!compatible_pair(scene.views[q], scene.views[r], config.max_pair_distance_m,
                           config.frustum_range_m)) {
        continue;
      }
      ScenePair p = make_pair(scene.views, q, r);
      if (!nontrivial_pair(p)) continue;
      p.overlap_fraction =
          frustum_overlap(scene.views[q], scene.views[r], config.frustum_range_m);
      candidates.push_back(p);
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const ScenePair& a, const ScenePair& b) {
                       return a.overlap_fraction > b.overlap_fraction;
                     });
    if (candidates.size() > config.max_pairs_per_query) {
      candidates.resize(config.max_pairs_per_query);
    }
    scene.pairs.insert(scene.pairs.end(), candidates.begin(), candidates.end());
  }
  if (scene.pairs.empty()) throw GenerationError("no view pair passes the pair filters");
  return scene;
}

std::vector<TrueCorrespondence> true_correspondences(const Scene& scene,
                                                     const ScenePair& pair) {
  std::vector<std::optional<Eigen::Vector2d>> ref(scene.landmarks.size());
  for (const auto& o : scene.observations.at(pair.reference)) ref[o.landmark] = o.px;
  std::vector<TrueCorrespondence> out;
  for (const auto& o : scene.observations.at(pair.query)) {
    if (ref[o.landmark]) out.push_back({o.px, *ref[o.landmark], o.landmark});
  }
  return out;
}

namespace {

struct Detection {
  Eigen::Vector2d px;
  double confidence;
};

std::vector<Detection> detections(const FeatureGrid& grid) {
  std::vector<Detection> out;
  const std::size_t cells = grid.cells_h() * grid.cells_w();
  for (std::size_t c = 0; c < cells; ++c) {
    const double* k = grid.keypoints.data().data() + c * kKeypointChannels;
    const std::size_t best =
        static_cast<std::size_t>(std::max_element(k, k + kKeypointChannels) - k);
    if (best == kNoKeypoint) continue;
    const std::size_t i = c / grid.cells_w(), j = c % grid.cells_w();
    out.push_back({{static_cast<double>(kCellSize * i + best / kCellSize),
                    static_cast<double>(kCellSize * j + best % kCellSize)},
                   1.0 - k[kNoKeypoint]});
  }
  return out;
}

}  // namespace

std::vector<KeypointLabels> scene_adaptation_targets(const std::vector<View>& views,
                                                     const std::vector<ScenePair>& pairs,
                                                     const FeatureExtractor& extractor) {
  std::vector<FeatureGrid> grids;
  std::vector<std::vector<Detection>> found;
  for (const View& v : views) {
    grids.push_back(extractor(v));
    found.push_back(detections(grids.back()));
  }
  std::vector<std::vector<std::size_t>> neighbours(views.size());
  for (const ScenePair& p : pairs) {
    neighbours.at(p.query).push_back(p.reference);
    neighbours.at(p.reference).push_back(p.query);
  }

  std::vector<KeypointLabels> labels;
  for (std::size_t vi = 0; vi < views.size(); ++vi) {
    const FeatureGrid& grid = grids[vi];
    const std::size_t gw = grid.cells_w(), cells = grid.cells_h() * gw;
    KeypointLabels target(cells, kNoKeypointLabel);
    std::vector<double> best(cells, -1.0);
    auto offer = [&](const Eigen::Vector2d& px, double confidence) {
      const auto x = static_cast<std::size_t>(px.x());
      const auto y = static_cast<std::size_t>(px.y());
      const std::size_t cell = (x / kCellSize) * gw + y / kCellSize;
      if (confidence <= best[cell]) return;
      best[cell] = confidence;
      target[cell] = 1 + (x % kCellSize) * kCellSize + y % kCellSize;
    };
    for (const Detection& d : found[vi]) offer(d.px, d.confidence);

    const View& v = views[vi];
    const Eigen::Vector2d limit{static_cast<double>(grid.image_h) - 1.0,
                                static_cast<double>(grid.image_w) - 1.0};
    for (std::size_t other : neighbours[vi]) {
      const View& o = views[other];
      const Pose rel = relative_pose(v.global_pose, o.global_pose);
      for (const Detection& d : found[other]) {
        const auto x = static_cast<std::size_t>(d.px.x());
        const auto y = static_cast<std::size_t>(d.px.y());
        if (x >= o.depth.height() || y >= o.depth.width() || !o.depth.valid(x, y)) continue;
        const double dist = o.depth.values[x * o.depth.width() + y];
        if (occlusion_check(d.px, dist, rel, o.intrinsics, v.depth) != Visibility::kVisible) {
          continue;
        }
        const Eigen::Vector2d px = reproject(d.px, dist, rel, o.intrinsics);
        const Eigen::Vector2d snapped{std::round(px.x()), std::round(px.y())};
        if (snapped.x() < 0.0 || snapped.y() < 0.0 || snapped.x() > limit.x() ||
            snapped.y() > limit.y()) {
          continue;
        }
        offer(snapped, d.confidence);
      }
    }
    labels.push_back(std::move(target));
  }
  return labels;
}

std::uint64_t label_hash(const std::vector<KeypointLabels>& labels) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  for (const auto& view : labels) {
    mix(view.size());
    for (std::size_t l : view) mix(l);
  }
  return h;
}

}  // namespace relpose
