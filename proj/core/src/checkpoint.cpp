#include "relpose/checkpoint.hpp"

#include <sstream>

#include "json.hpp"
#include "relpose/errors.hpp"
#include "relpose/scene_io.hpp"
#include "relpose/tensor_io.hpp"

namespace relpose {

using Json = nlohmann::ordered_json;

namespace {
constexpr int kCheckpointVersion = 1;
}

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const HilbertMap& map) {
  std::filesystem::create_directories(dir);
  Json params = Json::array();
  for (const auto& p : model_parameters(model)) {
    const std::string file = p.name + ".tnsr";
    save_tensor(dir / file, *p.value);
    params.push_back(Json{{"name", p.name}, {"file", file}});
  }
  std::ostringstream curve;
  write_curve_csv(curve, map);
  const Json manifest{
      {"format", "relpose-checkpoint"},
      {"version", kCheckpointVersion},
      {"stages", model.match.stages()},
      {"widths", model.match.widths()},
      {"kernel", model.match.kernel()},
      {"normalization", model.normalization == SoftMatchNormalization::kExcludeDustbin
                            ? "exclude_dustbin"
                            : "include_dustbin"},
      {"curve", Json{{"rows", map.rows()}, {"cols", map.cols()}, {"dump", curve.str()}}},
      {"parameters", std::move(params)}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const std::filesystem::path manifest_path = dir / "manifest.json";
  Json j;
  try {
    j = Json::parse(read_text_file(manifest_path));
  } catch (const Json::exception& e) {
    throw FormatError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  try {
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw FormatError("unsupported checkpoint version");
    }
    const auto widths = j.at("widths").get<std::vector<std::size_t>>();
    if (widths.size() != j.at("stages").get<std::size_t>()) {
      throw FormatError("checkpoint stage count does not match its widths");
    }
    Model model{MatchLayerParams(widths, j.at("kernel").get<std::size_t>()), KeypointHead{}};
    const std::string norm = j.at("normalization").get<std::string>();
    if (norm == "include_dustbin") {
      model.normalization = SoftMatchNormalization::kIncludeDustbin;
    } else if (norm != "exclude_dustbin") {
      throw FormatError("unknown normalization " + norm);
    }
    std::istringstream curve(j.at("curve").at("dump").get<std::string>());
    HilbertMap map = read_curve_csv(curve);
    if (map.rows() != j.at("curve").at("rows").get<std::size_t>() ||
        map.cols() != j.at("curve").at("cols").get<std::size_t>()) {
      throw FormatError("checkpoint curve dims disagree with its dump");
    }
    std::size_t loaded = 0;
    auto slots = model_parameters(model);
    for (const Json& p : j.at("parameters")) {
      const std::string name = p.at("name").get<std::string>();
      bool found = false;
      for (auto& slot : slots) {
        if (slot.name != name) continue;
        Tensor t = load_tensor(dir / p.at("file").get<std::string>());
        if (t.shape() != slot.value->shape()) {
          throw FormatError("checkpoint tensor " + name + " has shape " +
                            shape_to_string(t.shape()) + ", expected " +
                            shape_to_string(slot.value->shape()));
        }
        *slot.value = std::move(t);
        found = true;
        ++loaded;
      }
      if (!found) throw FormatError("unexpected checkpoint parameter " + name);
    }
    if (loaded != slots.size()) throw FormatError("checkpoint is missing parameters");
    return {std::move(model), std::move(map)};
  } catch (const Json::exception& e) {
    throw FormatError("malformed checkpoint manifest: " + std::string(e.what()));
  } catch (const DimensionError& e) {
    throw FormatError("invalid checkpoint: " + std::string(e.what()));
  } catch (const ShapeError& e) {
    throw FormatError("invalid checkpoint: " + std::string(e.what()));
  }
}

}  // namespace relpose
