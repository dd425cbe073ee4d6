#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "relpose/camera.hpp"
#include "relpose/scene.hpp"

namespace relpose {

// {"q":[w,x,y,z],"t":[x,y,z]}. Parsing throws FormatError.
std::string pose_to_json(const Pose& pose);
Pose pose_from_json(const std::string& text);
void save_pose(const std::filesystem::path& path, const Pose& pose);
Pose load_pose(const std::filesystem::path& path);

/// Views and pairs of a scene manifest.
struct SceneManifest {
  std::vector<View> views;
  std::vector<ScenePair> pairs;

  // Index of the view with this id; throws DataError if absent.
  std::size_t find(const std::string& id) const;
};

// Writes manifest.json plus one DMAP and one FGRD file per view into
// `dir`. Paths in the manifest are relative to it.
void write_scene(const std::filesystem::path& dir, const std::vector<View>& views,
                 const std::vector<ScenePair>& pairs);
// Reads a manifest and every file it references. Relative pair poses are
// recomputed from the global poses. Throws DataError on missing files and
// FormatError on malformed content.
SceneManifest load_manifest(const std::filesystem::path& path);

/// Ordered candidate lists per query, in file order.
using RetrievalLists = std::vector<std::pair<std::string, std::vector<std::string>>>;

// JSON object {query_id: [reference ids...]}; duplicate ids in a list are a
// FormatError.
RetrievalLists load_retrieval(const std::filesystem::path& path);
void save_retrieval(const std::filesystem::path& path, const RetrievalLists& lists);

// Per query view, up to `n` references ranked by frustum overlap among the
// pairs, ties in pair order.
RetrievalLists retrieval_from_pairs(const std::vector<View>& views,
                                    const std::vector<ScenePair>& pairs, std::size_t n = 16);

// Every field is optional and defaults to SynthConfig{}.
SynthConfig synth_config_from_json(const std::string& text);
std::string synth_config_to_json(const SynthConfig& config);

// Reads a whole text file; throws DataError.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace relpose
