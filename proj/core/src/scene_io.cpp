#include "relpose/scene_io.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "relpose/errors.hpp"

namespace relpose {

using Json = nlohmann::ordered_json;

namespace {

Json parse(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw FormatError("malformed " + what + ": " + e.what());
  }
}

Json pose_json(const Pose& pose) {
  const auto& q = pose.rotation();
  const auto& t = pose.translation();
  return Json{{"q", {q.w(), q.x(), q.y(), q.z()}}, {"t", {t.x(), t.y(), t.z()}}};
}

Pose pose_from(const Json& j) {
  try {
    const auto q = j.at("q").get<std::vector<double>>();
    const auto t = j.at("t").get<std::vector<double>>();
    if (q.size() != 4 || t.size() != 3) throw FormatError("pose needs q[4] and t[3]");
    const Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    if (!(quat.norm() > 0.0)) throw FormatError("pose quaternion is zero");
    return {quat, Eigen::Vector3d(t[0], t[1], t[2])};
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed pose: ") + e.what());
  }
}

Json intrinsics_json(const CameraIntrinsics& k) {
  return Json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}};
}

CameraIntrinsics intrinsics_from(const Json& j) {
  try {
    CameraIntrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(),
                       j.at("cx").get<double>(), j.at("cy").get<double>()};
    k.validate();
    return k;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed intrinsics: ") + e.what());
  } catch (const RangeError& e) {
    throw FormatError(std::string("invalid intrinsics: ") + e.what());
  }
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << text;
}

std::string pose_to_json(const Pose& pose) { return pose_json(pose).dump(); }

Pose pose_from_json(const std::string& text) { return pose_from(parse(text, "pose JSON")); }

void save_pose(const std::filesystem::path& path, const Pose& pose) {
  write_text_file(path, pose_to_json(pose) + "\n");
}

Pose load_pose(const std::filesystem::path& path) {
  return pose_from_json(read_text_file(path));
}

std::size_t SceneManifest::find(const std::string& id) const {
  for (std::size_t k = 0; k < views.size(); ++k) {
    if (views[k].id == id) return k;
  }
  throw DataError("unknown view id: " + id);
}

void write_scene(const std::filesystem::path& dir, const std::vector<View>& views,
                 const std::vector<ScenePair>& pairs) {
  std::filesystem::create_directories(dir);
  Json manifest;
  Json jviews = Json::array();
  for (const View& v : views) {
    const std::string depth_file = v.id + ".dmap";
    const std::string features_file = v.id + ".fgrd";
    save_depth_map(dir / depth_file, v.depth);
    save_feature_grid(dir / features_file, v.features);
    jviews.push_back(Json{{"id", v.id},
                          {"pose", pose_json(v.global_pose)},
                          {"intrinsics", intrinsics_json(v.intrinsics)},
                          {"depth_path", depth_file},
                          {"features_path", features_file}});
  }
  Json jpairs = Json::array();
  for (const ScenePair& p : pairs) {
    jpairs.push_back(
        Json{{"query_id", views.at(p.query).id}, {"reference_id", views.at(p.reference).id}});
  }
  manifest["views"] = std::move(jviews);
  manifest["pairs"] = std::move(jpairs);
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

SceneManifest load_manifest(const std::filesystem::path& path) {
  const Json j = parse(read_text_file(path), "scene manifest");
  const std::filesystem::path base = path.parent_path();
  SceneManifest m;
  try {
    std::set<std::string> ids;
    for (const Json& jv : j.at("views")) {
      View v;
      v.id = jv.at("id").get<std::string>();
      if (!ids.insert(v.id).second) throw FormatError("duplicate view id " + v.id);
      v.global_pose = pose_from(jv.at("pose"));
      v.intrinsics = intrinsics_from(jv.at("intrinsics"));
      v.depth = load_depth_map(base / jv.at("depth_path").get<std::string>());
      v.features = load_feature_grid(base / jv.at("features_path").get<std::string>());
      if (v.depth.height() != v.features.image_h || v.depth.width() != v.features.image_w) {
        throw FormatError("view " + v.id + ": depth and feature grid sizes differ");
      }
      m.views.push_back(std::move(v));
    }
    if (j.contains("pairs")) {
      for (const Json& jp : j.at("pairs")) {
        ScenePair p = make_pair(m.views, m.find(jp.at("query_id").get<std::string>()),
                                m.find(jp.at("reference_id").get<std::string>()));
        p.overlap_fraction = frustum_overlap(m.views[p.query], m.views[p.reference], 10.0);
        m.pairs.push_back(p);
      }
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed scene manifest: ") + e.what());
  }
  return m;
}

RetrievalLists load_retrieval(const std::filesystem::path& path) {
  const Json j = parse(read_text_file(path), "retrieval list");
  if (!j.is_object()) throw FormatError("retrieval list must be a JSON object");
  RetrievalLists lists;
  try {
    for (const auto& [query, refs] : j.items()) {
      auto ids = refs.get<std::vector<std::string>>();
      std::set<std::string> unique(ids.begin(), ids.end());
      if (unique.size() != ids.size()) {
        throw FormatError("retrieval list of " + query + " has duplicate ids");
      }
      lists.emplace_back(query, std::move(ids));
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed retrieval list: ") + e.what());
  }
  return lists;
}

void save_retrieval(const std::filesystem::path& path, const RetrievalLists& lists) {
  Json j = Json::object();
  for (const auto& [query, refs] : lists) j[query] = refs;
  write_text_file(path, j.dump(2) + "\n");
}

RetrievalLists retrieval_from_pairs(const std::vector<View>& views,
                                    const std::vector<ScenePair>& pairs, std::size_t n) {
  RetrievalLists lists;
  for (std::size_t q = 0; q < views.size(); ++q) {
    std::vector<const ScenePair*> mine;
    for (const ScenePair& p : pairs) {
      if (p.query == q) mine.push_back(&p);
    }
    if (mine.empty()) continue;
    std::stable_sort(mine.begin(), mine.end(), [](const ScenePair* a, const ScenePair* b) {
      return a->overlap_fraction > b->overlap_fraction;
    });
    std::vector<std::string> ids;
    for (const ScenePair* p : mine) {
      if (ids.size() == n) break;
      const std::string& id = views.at(p->reference).id;
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    }
    lists.emplace_back(views[q].id, std::move(ids));
  }
  return lists;
}

SynthConfig synth_config_from_json(const std::string& text) {
  const Json j = parse(text, "synthesis config");
  if (!j.is_object()) throw FormatError("synthesis config must be a JSON object");
  SynthConfig c;
  try {
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("grid_h", c.grid_h);
    take("grid_w", c.grid_w);
    take("view_count", c.view_count);
    take("landmark_count", c.landmark_count);
    take("descriptor_dim", c.descriptor_dim);
    take("descriptor_noise_sigma", c.descriptor_noise_sigma);
    take("outlier_fraction", c.outlier_fraction);
    take("depth_min", c.depth_min);
    take("depth_max", c.depth_max);
    take("baseline_max", c.baseline_max);
    take("rotation_max_deg", c.rotation_max_deg);
    take("max_pairs_per_query", c.max_pairs_per_query);
    take("max_pair_distance_m", c.max_pair_distance_m);
    take("frustum_range_m", c.frustum_range_m);
    take("seed", c.seed);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed synthesis config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string synth_config_to_json(const SynthConfig& c) {
  const Json j{{"grid_h", c.grid_h},
               {"grid_w", c.grid_w},
               {"view_count", c.view_count},
               {"landmark_count", c.landmark_count},
               {"descriptor_dim", c.descriptor_dim},
               {"descriptor_noise_sigma", c.descriptor_noise_sigma},
               {"outlier_fraction", c.outlier_fraction},
               {"depth_min", c.depth_min},
               {"depth_max", c.depth_max},
               {"baseline_max", c.baseline_max},
               {"rotation_max_deg", c.rotation_max_deg},
               {"max_pairs_per_query", c.max_pairs_per_query},
               {"max_pair_distance_m", c.max_pair_distance_m},
               {"frustum_range_m", c.frustum_range_m},
               {"seed", c.seed}};
  return j.dump(2);
}

}  // namespace relpose
