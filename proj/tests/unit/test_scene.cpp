#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "relpose/correlation.hpp"
#include "relpose/errors.hpp"
#include "relpose/pipeline.hpp"
#include "relpose/scene.hpp"
#include "relpose/scene_io.hpp"
#include "support/testing.hpp"

namespace relpose {
namespace {

SynthConfig small_config(std::uint64_t seed) {
  SynthConfig c;
  c.view_count = 8;
  c.landmark_count = 150;
  c.descriptor_dim = 32;
  c.seed = seed;
  return c;
}

View camera_at(const Pose& global, std::size_t h = 64, std::size_t w = 64) {
  View v;
  v.id = "v";
  v.global_pose = global;
  v.intrinsics = testing::desk_intrinsics();
  v.depth = DepthMap{Tensor(Shape{h, w}, 5.0)};
  return v;
}

// Camera at world position `center` looking along +z, rotated by `yaw_deg`
// about the vertical axis.
Pose looking(const Eigen::Vector3d& center, double yaw_deg = 0.0) {
  const Eigen::Matrix3d world_from_camera =
      Eigen::AngleAxisd(yaw_deg * M_PI / 180.0, Eigen::Vector3d::UnitY()).toRotationMatrix();
  return Pose(Eigen::Matrix3d(world_from_camera.transpose()),
              Eigen::Vector3d(-(world_from_camera.transpose() * center)));
}

TEST(Scene, GenerationIsDeterministic) {
  const Scene a = generate_scene(small_config(3));
  const Scene b = generate_scene(small_config(3));
  ASSERT_EQ(a.views.size(), b.views.size());
  for (std::size_t k = 0; k < a.views.size(); ++k) {
    EXPECT_EQ(a.views[k].global_pose, b.views[k].global_pose);
    EXPECT_EQ(a.views[k].depth.values, b.views[k].depth.values);
    EXPECT_EQ(a.views[k].features.keypoint_logits, b.views[k].features.keypoint_logits);
    EXPECT_EQ(a.views[k].features.descriptors_raw, b.views[k].features.descriptors_raw);
  }
  ASSERT_EQ(a.pairs.size(), b.pairs.size());
  for (std::size_t k = 0; k < a.pairs.size(); ++k) {
    EXPECT_EQ(a.pairs[k].query, b.pairs[k].query);
    EXPECT_EQ(a.pairs[k].reference, b.pairs[k].reference);
  }
  const Scene c = generate_scene(small_config(4));
  EXPECT_FALSE(c.views[0].global_pose == a.views[0].global_pose);
}

TEST(Scene, GridsMatchTheImageSize) {
  SynthConfig cfg = small_config(5);
  cfg.grid_h = 6;
  cfg.grid_w = 10;
  const Scene s = generate_scene(cfg);
  for (const View& v : s.views) {
    EXPECT_EQ(v.features.image_h, 48u);
    EXPECT_EQ(v.features.image_w, 80u);
    EXPECT_EQ(v.depth.height(), 48u);
    EXPECT_EQ(v.depth.width(), 80u);
  }
}

TEST(Scene, PairsPassTheFiltersAndCarryRelativePoses) {
  const Scene s = generate_scene(small_config(6));
  ASSERT_FALSE(s.pairs.empty());
  for (const ScenePair& p : s.pairs) {
    const View& q = s.views[p.query];
    const View& r = s.views[p.reference];
    EXPECT_TRUE(compatible_pair(q, r));
    EXPECT_TRUE(nontrivial_pair(p));
    // Reference camera -> world -> query camera, composed by hand.
    const Eigen::Matrix3d rot =
        q.global_pose.rotation_matrix() * r.global_pose.rotation_matrix().transpose();
    const Eigen::Vector3d t =
        q.global_pose.translation() - rot * r.global_pose.translation();
    EXPECT_LT((p.relative_pose.rotation_matrix() - rot).norm(), 1e-9);
    EXPECT_LT((p.relative_pose.translation() - t).norm(), 1e-9);
  }
}

TEST(Scene, LandmarksAreSeenTwiceAndObservationsAreExact) {
  const Scene s = generate_scene(small_config(7));
  for (std::size_t vi = 0; vi < s.views.size(); ++vi) {
    const View& v = s.views[vi];
    for (const LandmarkObservation& o : s.observations[vi]) {
      const Eigen::Vector2d px = project(v.global_pose.apply(s.landmarks[o.landmark].position),
                                         v.intrinsics);
      EXPECT_LT((px - o.px).norm(), 1e-9);
    }
  }
  // Visibility oracle: in front, inside the image and not hidden behind
  // the panel (|X| <= 0.6 m at z = 4.4 for the default depth range).
  const double panel_z = 2.0 + 0.4 * 6.0;
  for (const Landmark& l : s.landmarks) {
    std::size_t views = 0;
    for (const View& v : s.views) {
      const Eigen::Vector3d cam = v.global_pose.apply(l.position);
      if (cam.z() <= 0.0) continue;
      const Eigen::Vector2d px = project(cam, v.intrinsics);
      if (!v.depth.in_bounds(px)) continue;
      const Eigen::Vector3d o = camera_center(v.global_pose);
      const double t = (panel_z - o.z()) / (l.position.z() - o.z());
      const bool blocked = t > 0.0 && t < 1.0 - 1e-9 &&
                           std::abs(o.x() + t * (l.position.x() - o.x())) <= 0.6;
      if (!blocked) ++views;
    }
    EXPECT_GE(views, 2u);
  }
}

TEST(Scene, TrueCorrespondencesReprojectThroughDepth) {
  const Scene s = generate_scene(small_config(8));
  std::size_t checked = 0;
  for (const ScenePair& p : s.pairs) {
    const View& r = s.views[p.reference];
    for (const TrueCorrespondence& c : true_correspondences(s, p)) {
      const auto d = sample_depth(r.depth, r.intrinsics, c.reference_px);
      ASSERT_TRUE(d.has_value());
      const Eigen::Vector2d px =
          reproject(c.reference_px, d->distance, p.relative_pose, r.intrinsics);
      EXPECT_LT((px - c.query_px).norm(), 0.5);
      ++checked;
    }
  }
  EXPECT_GT(checked, 20u);
}

TEST(Scene, SelfPairCorrespondencesCoincide) {
  const Scene s = generate_scene(small_config(9));
  const ScenePair self = make_pair(s.views, 0, 0);
  EXPECT_LT(self.relative_pose.translation().norm(), 1e-12);
  for (const TrueCorrespondence& c : true_correspondences(s, self)) {
    EXPECT_EQ(c.query_px, c.reference_px);
  }
}

TEST(Scene, NoiselessGridsGiveAPerfectBaseline) {
  SynthConfig cfg = small_config(10);
  cfg.descriptor_dim = 64;
  cfg.descriptor_noise_sigma = 0.0;
  cfg.outlier_fraction = 0.0;
  const Scene s = generate_scene(cfg);
  std::size_t matched = 0;
  for (const ScenePair& p : s.pairs) {
    const View& q = s.views[p.query];
    const View& r = s.views[p.reference];
    const auto matches = baseline_argmax_matching(q.features, r.features, 0.7);
    matched += matches.size();
    if (!matches.empty()) EXPECT_EQ(inlier_ratio(matches, r, p.relative_pose), 1.0);
  }
  EXPECT_GT(matched, 0u);
}

TEST(Scene, OutlierFractionControlsDistractorCells) {
  SynthConfig cfg = small_config(11);
  cfg.outlier_fraction = 0.3;
  const Scene s = generate_scene(cfg);
  const View& v = s.views[0];
  std::size_t distractors = 0;
  const std::size_t cells = v.features.cells_h() * v.features.cells_w();
  for (std::size_t c = 0; c < cells; ++c) {
    const double dust = v.features.keypoints[c * kKeypointChannels + kNoKeypoint];
    if (dust > 0.3 && dust < 0.7) ++distractors;
  }
  const double genuine = static_cast<double>(s.observations[0].size());
  EXPECT_NEAR(static_cast<double>(distractors), std::round(0.3 * genuine / 0.7), 1.0);
}

TEST(Scene, InvalidConfigsAreRejected) {
  SynthConfig cfg = small_config(1);
  cfg.outlier_fraction = 1.0;
  EXPECT_THROW(generate_scene(cfg), RangeError);
  cfg = small_config(1);
  cfg.view_count = 1;
  EXPECT_THROW(generate_scene(cfg), RangeError);
  // Two cameras kilometres apart share nothing.
  cfg = small_config(1);
  cfg.view_count = 2;
  cfg.landmark_count = 5;
  cfg.baseline_max = 1000.0;
  EXPECT_THROW(generate_scene(cfg), GenerationError);
}

TEST(PairRules, CompatibilityExamples) {
  const View a = camera_at(looking({0, 0, 0}));
  EXPECT_TRUE(compatible_pair(a, a));
  EXPECT_NEAR(frustum_overlap(a, a, 10.0), 1.0, 1e-12);
  EXPECT_FALSE(compatible_pair(a, camera_at(looking({25, 0, 0}))));
  // Back to back, one metre apart.
  EXPECT_FALSE(compatible_pair(camera_at(looking({0, 0, 0.5})),
                               camera_at(looking({0, 0, -0.5}, 180.0))));
  EXPECT_TRUE(compatible_pair(a, camera_at(looking({0.5, 0, 0}, 5.0))));
}

TEST(PairRules, NontrivialIsAConjunction) {
  auto pair_with = [](double t, double deg) {
    ScenePair p;
    p.relative_pose = Pose(Eigen::Quaterniond(Eigen::AngleAxisd(deg * M_PI / 180.0,
                                                                Eigen::Vector3d::UnitZ())),
                           Eigen::Vector3d(t, 0, 0));
    return p;
  };
  EXPECT_FALSE(nontrivial_pair(pair_with(0.0, 0.0)));
  EXPECT_FALSE(nontrivial_pair(pair_with(0.4, 3.0)));
  EXPECT_TRUE(nontrivial_pair(pair_with(0.4, 10.0)));
  EXPECT_TRUE(nontrivial_pair(pair_with(0.6, 3.0)));
}

// One-hot keypoint grid with a single detection at pixel (x, y).
FeatureGrid single_detection(std::size_t gh, std::size_t gw, std::size_t x, std::size_t y,
                             double dustbin_logit = 0.0) {
  Tensor logits(Shape{gh, gw, kKeypointChannels}, -30.0);
  for (std::size_t c = 0; c < gh * gw; ++c) logits[c * kKeypointChannels + kNoKeypoint] = 0.0;
  const std::size_t cell = (x / kCellSize) * gw + y / kCellSize;
  logits[cell * kKeypointChannels + (x % kCellSize) * kCellSize + y % kCellSize] = 5.0;
  logits[cell * kKeypointChannels + kNoKeypoint] = dustbin_logit;
  return normalize_grid(logits, Tensor(Shape{gh, gw, 2}, 1.0));
}

TEST(SceneAdaptation, SingleViewKeepsItsOwnDetections) {
  View v = camera_at(Pose::identity());
  v.features = single_detection(8, 8, 19, 42);
  const auto labels =
      scene_adaptation_targets({v}, {}, [](const View& x) { return x.features; });
  ASSERT_EQ(labels.size(), 1u);
  for (std::size_t c = 0; c < 64; ++c) {
    EXPECT_EQ(labels[0][c], c == 2 * 8 + 5 ? 1 + 3 * 8 + 2 : kNoKeypointLabel);
  }
}

TEST(SceneAdaptation, IdenticalViewsAreIdempotent) {
  View v = camera_at(Pose::identity());
  v.depth = testing::plane_depth(64, 64, v.intrinsics, 5.0);
  v.features = single_detection(8, 8, 30, 33);
  const auto extract = [](const View& x) { return x.features; };
  const auto alone = scene_adaptation_targets({v}, {}, extract);
  std::vector<View> twins{v, v};
  ScenePair p;
  p.query = 0;
  p.reference = 1;
  const auto both = scene_adaptation_targets(twins, {p}, extract);
  EXPECT_EQ(both[0], alone[0]);
  EXPECT_EQ(both[1], alone[0]);
}

TEST(SceneAdaptation, ReprojectedDetectionsLandInTheOtherView) {
  View a = camera_at(Pose::identity());
  a.depth = testing::plane_depth(64, 64, a.intrinsics, 5.0);
  a.features = single_detection(8, 8, 30, 33);
  View b = a;
  b.global_pose = Pose(Eigen::Quaterniond::Identity(), Eigen::Vector3d(0.0, -0.5, 0.0));
  b.features = single_detection(8, 8, 60, 2);
  ScenePair p;
  p.query = 1;
  p.reference = 0;
  const auto labels =
      scene_adaptation_targets({a, b}, {p}, [](const View& x) { return x.features; });
  // b sees the world shifted by -0.5 m along y; at z = 5 that is
  // fy * 0.5 / 5 = 5.76 px, so (30, 33) lands on (30, 27.24) -> (30, 27).
  const std::size_t cell = 3 * 8 + 3;
  EXPECT_EQ(labels[1][cell], 1 + 6 * 8 + 3);
  EXPECT_EQ(labels[1][7 * 8 + 0], 1 + 4 * 8 + 2);
}

TEST(SceneAdaptation, OccludedReprojectionsAreDropped) {
  View a = camera_at(Pose::identity());
  a.depth = testing::plane_depth(64, 64, a.intrinsics, 6.0);
  a.features = single_detection(8, 8, 30, 34);
  // Same viewpoint, but b sees a nearer surface in front of the point.
  View b = a;
  b.depth = testing::plane_depth(64, 64, b.intrinsics, 3.0);
  b.features = single_detection(8, 8, 5, 5);
  ScenePair p;
  p.query = 1;
  p.reference = 0;
  const auto extract = [](const View& x) { return x.features; };
  const auto labels = scene_adaptation_targets({a, b}, {p}, extract);
  const auto own = scene_adaptation_targets({b}, {}, extract);
  EXPECT_EQ(labels[1], own[0]);
  EXPECT_EQ(labels[1][3 * 8 + 4], kNoKeypointLabel);
}

TEST(SceneAdaptation, HigherConfidenceWinsWithinACell) {
  View a = camera_at(Pose::identity());
  a.depth = testing::plane_depth(64, 64, a.intrinsics, 5.0);
  a.features = single_detection(8, 8, 17, 17, 0.0);  // confident
  View b = a;
  b.features = single_detection(8, 8, 22, 22, 6.0);  // weak
  ScenePair p;
  p.query = 1;
  p.reference = 0;
  const auto labels =
      scene_adaptation_targets({a, b}, {p}, [](const View& x) { return x.features; });
  EXPECT_EQ(labels[1][2 * 8 + 2], 1 + 1 * 8 + 1);
  EXPECT_EQ(labels[0][2 * 8 + 2], 1 + 1 * 8 + 1);
}

TEST(SceneAdaptation, LabelHashTracksContent) {
  const std::vector<KeypointLabels> a{{1, 65, 3}, {65}};
  std::vector<KeypointLabels> b = a;
  EXPECT_EQ(label_hash(a), label_hash(b));
  b[1][0] = 64;
  EXPECT_NE(label_hash(a), label_hash(b));
  EXPECT_NE(label_hash({{1, 2}}), label_hash({{2, 1}}));
}

TEST(SceneIO, ManifestRoundTrip) {
  const Scene s = generate_scene(small_config(12));
  testing::TempDir dir("scene");
  write_scene(dir.path(), s.views, s.pairs);
  const SceneManifest m = load_manifest(dir / "manifest.json");
  ASSERT_EQ(m.views.size(), s.views.size());
  for (std::size_t k = 0; k < m.views.size(); ++k) {
    EXPECT_EQ(m.views[k].id, s.views[k].id);
    EXPECT_EQ(m.views[k].global_pose, s.views[k].global_pose);
    EXPECT_EQ(m.views[k].intrinsics, s.views[k].intrinsics);
    EXPECT_EQ(m.views[k].features.keypoint_logits, s.views[k].features.keypoint_logits);
    for (std::size_t i = 0; i < s.views[k].depth.values.size(); ++i) {
      ASSERT_EQ(m.views[k].depth.values[i],
                static_cast<double>(static_cast<float>(s.views[k].depth.values[i])));
    }
  }
  ASSERT_EQ(m.pairs.size(), s.pairs.size());
  EXPECT_EQ(m.pairs[0].query, s.pairs[0].query);
  EXPECT_LT((m.pairs[0].relative_pose.translation() - s.pairs[0].relative_pose.translation())
                .norm(),
            1e-12);
  EXPECT_EQ(m.find(s.views[3].id), 3u);
  EXPECT_THROW(m.find("missing"), DataError);
}

TEST(SceneIO, MissingFilesAreDataErrors) {
  const Scene s = generate_scene(small_config(13));
  testing::TempDir dir("scene_missing");
  write_scene(dir.path(), s.views, s.pairs);
  std::filesystem::remove(dir / (s.views[1].id + ".dmap"));
  EXPECT_THROW(load_manifest(dir / "manifest.json"), DataError);
  EXPECT_THROW(load_manifest(dir / "nope.json"), DataError);
  write_text_file(dir / "bad.json", "{\"views\": 3}");
  EXPECT_THROW(load_manifest(dir / "bad.json"), FormatError);
}

TEST(SceneIO, RetrievalListsRankByOverlap) {
  const Scene s = generate_scene(small_config(14));
  const RetrievalLists lists = retrieval_from_pairs(s.views, s.pairs, 3);
  for (const auto& [query, refs] : lists) {
    EXPECT_LE(refs.size(), 3u);
    const std::size_t q = SceneManifest{s.views, s.pairs}.find(query);
    double last = 2.0;
    for (const std::string& r : refs) {
      const double o = frustum_overlap(s.views[q], s.views[SceneManifest{s.views, {}}.find(r)],
                                       s.config.frustum_range_m);
      EXPECT_LE(o, last + 1e-12);
      last = o;
    }
  }
  testing::TempDir dir("retrieval");
  save_retrieval(dir / "r.json", lists);
  EXPECT_EQ(load_retrieval(dir / "r.json"), lists);
  write_text_file(dir / "dup.json", R"({"a": ["b", "c", "b"]})");
  EXPECT_THROW(load_retrieval(dir / "dup.json"), FormatError);
}

TEST(SceneIO, PoseAndConfigJson) {
  const Pose p(Eigen::Quaterniond(Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized())),
               Eigen::Vector3d(0.1, -2.5, 3.0));
  EXPECT_EQ(pose_from_json(pose_to_json(p)), p);
  EXPECT_THROW(pose_from_json("{\"q\": [1, 0]}"), FormatError);
  SynthConfig c = small_config(99);
  c.outlier_fraction = 0.25;
  const SynthConfig back = synth_config_from_json(synth_config_to_json(c));
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.outlier_fraction, 0.25);
  EXPECT_EQ(back.descriptor_dim, 32u);
  EXPECT_EQ(synth_config_from_json("{}").view_count, SynthConfig{}.view_count);
}

}  // namespace
}  // namespace relpose
