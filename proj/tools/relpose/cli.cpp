#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "relpose/checkpoint.hpp"
#include "relpose/errors.hpp"
#include "relpose/gradcheck.hpp"
#include "relpose/hilbert.hpp"
#include "relpose/localizer.hpp"
#include "relpose/pipeline.hpp"
#include "relpose/scene.hpp"
#include "relpose/scene_io.hpp"
#include "relpose/trainer.hpp"

namespace relpose::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

constexpr int kUsage = 1;
constexpr int kDataError = 2;

// Raised for bad flag values that CLI11 cannot validate on its own.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

// An explicit --seed wins, then RELPOSE_SEED, then the fallback.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("RELPOSE_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw UsageError(std::string("RELPOSE_SEED is not an integer: ") + env);
    return v;
  }
  return fallback;
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    const auto rows = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(text);
    const std::string rest = text.substr(x + 1);
    const auto cols = std::stoul(rest, &used);
    if (used != rest.size() || rows == 0 || cols == 0) throw std::invalid_argument(text);
    return {rows, cols};
  } catch (const std::logic_error&) {
    throw UsageError("grid must look like RxC with positive integers, got '" + text + "'");
  }
}

Matcher parse_matcher(const std::string& name) {
  if (name == "learned") return Matcher::kLearned;
  if (name == "baseline") return Matcher::kBaseline;
  throw UsageError("matcher must be 'learned' or 'baseline', got '" + name + "'");
}

json pose_json(const Pose& pose) { return json::parse(pose_to_json(pose)); }

// Model and curve for evaluation. The baseline matcher needs no trained
// parameters, so a checkpoint is optional for it.
Checkpoint model_for(const std::string& ckpt, Matcher matcher, std::size_t rows,
                     std::size_t cols) {
  if (!ckpt.empty()) {
    Checkpoint c = load_checkpoint(ckpt);
    if (c.map.rows() != rows || c.map.cols() != cols) {
      throw DataError("checkpoint grid " + std::to_string(c.map.rows()) + "x" +
                      std::to_string(c.map.cols()) + " does not match the data grid " +
                      std::to_string(rows) + "x" + std::to_string(cols));
    }
    return c;
  }
  if (matcher == Matcher::kLearned) throw UsageError("--ckpt is required for the learned matcher");
  return {Model{MatchLayerParams::random({4, 8, 16}, 0), KeypointHead{}},
          build_pseudo_hilbert(rows, cols)};
}

std::pair<std::size_t, std::size_t> grid_of(const std::vector<View>& views) {
  if (views.empty()) throw DataError("manifest has no views");
  return {views.front().features.cells_h(), views.front().features.cells_w()};
}

// ---------------------------------------------------------------- synth-gen

struct SynthArgs {
  std::string config, out, grid;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> views, landmarks, retrieval_n;
  std::optional<double> noise, outliers;
};

int synth_gen(const SynthArgs& a) {
  SynthConfig config;
  if (!a.config.empty()) config = synth_config_from_json(read_text_file(a.config));
  config.seed = resolve_seed(a.seed, config.seed);
  if (!a.grid.empty()) std::tie(config.grid_h, config.grid_w) = parse_grid(a.grid);
  if (a.views) config.view_count = *a.views;
  if (a.landmarks) config.landmark_count = *a.landmarks;
  if (a.noise) config.descriptor_noise_sigma = *a.noise;
  if (a.outliers) config.outlier_fraction = *a.outliers;

  const auto start = Clock::now();
  const Scene scene = generate_scene(config);
  fs::create_directories(a.out);
  write_scene(a.out, scene.views, scene.pairs);
  save_retrieval(fs::path(a.out) / "retrieval.json",
                 retrieval_from_pairs(scene.views, scene.pairs, a.retrieval_n.value_or(16)));
  write_text_file(fs::path(a.out) / "synth_config.json", synth_config_to_json(config));
  std::printf("wrote %zu views, %zu pairs, %zu landmarks to %s (%.1f ms)\n", scene.views.size(),
              scene.pairs.size(), scene.landmarks.size(), a.out.c_str(), elapsed_ms(start));
  return 0;
}

// -------------------------------------------------------------------- train

struct TrainArgs {
  std::string config, data, out, init;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, max_pairs;
};

// Matching-layer architecture from the optional "model" object of the
// training config.
Model initial_model(const json& cfg, std::uint64_t seed) {
  std::vector<std::size_t> widths{8, 16, 32};
  std::size_t kernel = 3;
  double input_gain = 10.0;
  if (cfg.contains("model")) {
    const json& m = cfg.at("model");
    if (m.contains("widths")) widths = m.at("widths").get<std::vector<std::size_t>>();
    if (m.contains("kernel")) kernel = m.at("kernel").get<std::size_t>();
    if (m.contains("input_gain")) input_gain = m.at("input_gain").get<double>();
  }
  return Model{MatchLayerParams::random(widths, seed, input_gain, kernel), KeypointHead{}};
}

int train_cmd(const TrainArgs& a) {
  const std::string text = a.config.empty() ? std::string("{}") : read_text_file(a.config);
  TrainConfig config = train_config_from_json(text);
  json cfg;
  try {
    cfg = json::parse(text);
    if (cfg.contains("model") && !cfg.at("model").is_object()) {
      throw FormatError("training config: \"model\" must be an object");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("training config: ") + e.what());
  }
  config.seed = resolve_seed(a.seed, config.seed);
  if (a.epochs) config.epochs = *a.epochs;
  config.validate();

  const SceneManifest scene = load_manifest(a.data);
  const auto [rows, cols] = grid_of(scene.views);
  std::vector<ScenePair> pairs = scene.pairs;
  if (a.max_pairs && pairs.size() > *a.max_pairs) pairs.resize(*a.max_pairs);

  Model model;
  HilbertMap map = build_pseudo_hilbert(rows, cols);
  if (!a.init.empty()) {
    Checkpoint c = model_for(a.init, Matcher::kLearned, rows, cols);
    model = std::move(c.model);
    map = std::move(c.map);
  } else {
    try {
      model = initial_model(cfg, config.seed);
    } catch (const json::exception& e) {
      throw FormatError(std::string("training config model: ") + e.what());
    }
  }

  const auto start = Clock::now();
  const TrainData data{&scene.views, pairs, &map};
  const TrainResult result = train(data, model, config, [&](std::size_t epoch, const Model&) {
    std::printf("epoch %zu/%zu done (%.1f s)\n", epoch + 1, config.epochs,
                elapsed_ms(start) / 1000.0);
    std::fflush(stdout);
  });

  save_checkpoint(a.out, result.model, map);
  write_train_log(fs::path(a.out) / "train_log.csv", result.log);
  std::ostringstream adapt;
  adapt << "epoch,label_hash\n";
  for (const AdaptationRecord& r : result.adaptations) adapt << r.epoch << ',' << r.label_hash << '\n';
  write_text_file(fs::path(a.out) / "adaptations.csv", adapt.str());

  const std::vector<double> smooth = smoothed_total(result.log);
  if (!smooth.empty()) {
    std::printf("steps %zu, smoothed loss %.6g -> %.6g\n", result.log.size(), smooth.front(),
                smooth.back());
  }
  std::printf("checkpoint written to %s (%.1f s)\n", a.out.c_str(), elapsed_ms(start) / 1000.0);
  return 0;
}

// --------------------------------------------------------------- eval-pairs

struct EvalArgs {
  std::string pairs, ckpt, out, matcher = "learned";
  std::optional<std::uint64_t> seed;
  double ratio = 0.7, threshold = kDefaultMatchThreshold, inlier_px = 8.0;
  std::optional<std::size_t> max_pairs;
};

int eval_pairs_cmd(const EvalArgs& a) {
  EvalOptions options;
  options.matcher = parse_matcher(a.matcher);
  options.baseline_ratio = a.ratio;
  options.match_threshold = a.threshold;
  options.inlier_px = a.inlier_px;
  options.ransac.inlier_px = a.inlier_px;
  options.ransac.seed = resolve_seed(a.seed, 0);

  const SceneManifest scene = load_manifest(a.pairs);
  const auto [rows, cols] = grid_of(scene.views);
  const Checkpoint ckpt = model_for(a.ckpt, options.matcher, rows, cols);
  std::vector<ScenePair> pairs = scene.pairs;
  if (a.max_pairs && pairs.size() > *a.max_pairs) pairs.resize(*a.max_pairs);

  const auto start = Clock::now();
  const std::vector<PairMetrics> metrics =
      evaluate_pairs(scene.views, pairs, ckpt.model, ckpt.map, options);
  write_metrics_csv(a.out, metrics);
  const MetricsSummary s = summarize(metrics);
  std::printf("pairs %zu  mean inlier ratio %.4f  N%% %.1f  r_a %.4g deg  r_m %.4g deg  "
              "t_a %.4g m  t_m %.4g m  (%.1f ms)\n",
              s.count, s.mean_inlier_ratio, s.n_pct, s.r_a, s.r_m, s.t_a, s.t_m,
              elapsed_ms(start));
  return 0;
}

// ----------------------------------------------------------------- localize

struct LocalizeArgs {
  std::string query, db, retrieval, ckpt, out, matcher = "learned";
  bool refine = false;
  std::optional<std::uint64_t> seed;
  double ratio = 0.7, threshold = kDefaultMatchThreshold, inlier_px = 8.0, merge_dist = 1.0;
};

json localization_json(const LocalizationResult& r) {
  json out;
  out["query_id"] = r.query_id;
  out["estimated"] = r.estimated;
  if (r.estimated) {
    out["pose"] = pose_json(r.global_pose);
    out["inlier_count"] = r.inlier_count;
    out["reference_id"] = r.candidates.at(r.best).reference_id;
  }
  out["refined"] = r.refined;
  json candidates = json::array();
  for (const CandidateResult& c : r.candidates) {
    json item;
    item["reference_id"] = c.reference_id;
    item["estimated"] = c.estimated;
    if (c.estimated) {
      item["inliers"] = c.inliers;
      item["relative_pose"] = pose_json(c.relative);
    }
    candidates.push_back(std::move(item));
  }
  out["candidates"] = std::move(candidates);
  return out;
}

int localize_cmd(const LocalizeArgs& a) {
  LocalizeOptions options;
  options.matcher = parse_matcher(a.matcher);
  options.baseline_ratio = a.ratio;
  options.match_threshold = a.threshold;
  options.ransac.inlier_px = a.inlier_px;
  options.ransac.seed = resolve_seed(a.seed, 0);
  options.merge_dist_m = a.merge_dist;

  const SceneManifest db = load_manifest(a.db);
  const auto [rows, cols] = grid_of(db.views);
  const Checkpoint ckpt = model_for(a.ckpt, options.matcher, rows, cols);
  const View& query = db.views.at(db.find(a.query));
  const RetrievalLists lists = load_retrieval(a.retrieval);
  const std::vector<std::string>* candidates = nullptr;
  for (const auto& [id, refs] : lists) {
    if (id == a.query) candidates = &refs;
  }
  if (!candidates) throw DataError("retrieval file has no list for query '" + a.query + "'");

  const auto start = Clock::now();
  LocalizationResult result;
  try {
    result = localize(query, db.views, *candidates, ckpt.model, ckpt.map, options);
    if (a.refine) result = pose_refinement(result, db.views, query.intrinsics, options);
  } catch (const LocalizationFailure& e) {
    result = {};
    result.query_id = a.query;
    std::fprintf(stderr, "localization failed: %s\n", e.what());
  }
  const double ms = elapsed_ms(start);

  const std::string text = localization_json(result).dump(2) + "\n";
  if (a.out.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    write_text_file(a.out, text);
    std::printf("%s: %s, %zu inliers%s\n", a.query.c_str(),
                result.estimated ? "estimated" : "not estimated", result.inlier_count,
                result.refined ? ", refined" : "");
  }
  std::printf("timing_ms %.3f\n", ms);
  return 0;
}

// ------------------------------------------------------------- hilbert-dump

int hilbert_dump(std::size_t rows, std::size_t cols, const std::string& out) {
  const HilbertMap map = build_pseudo_hilbert(rows, cols);
  if (out.empty()) {
    write_curve_csv(std::cout, map);
    return 0;
  }
  std::ofstream file(out, std::ios::binary);
  if (!file) throw DataError("cannot write " + out);
  write_curve_csv(file, map);
  if (!file.flush()) throw DataError("failed writing " + out);
  std::printf("%zux%zu curve written to %s (locality %.4f, row-major %.4f)\n", rows, cols,
              out.c_str(), locality_score(map), row_major_locality_score(rows, cols));
  return 0;
}

// --------------------------------------------------------------- grad-check

struct GradArgs {
  std::string grid = "4x4", out;
  std::optional<std::uint64_t> seed;
  std::size_t probes = 200;
  std::vector<std::size_t> widths{4, 8, 16};
  double tolerance = 1e-4;
};

int grad_check_cmd(const GradArgs& a) {
  GradCheckOptions options;
  std::tie(options.grid_h, options.grid_w) = parse_grid(a.grid);
  options.seed = resolve_seed(a.seed, options.seed);
  options.probes = a.probes;
  options.widths = a.widths;
  const GradCheckReport report = run_grad_check(options);
  if (!a.out.empty()) {
    std::ostringstream csv;
    char buf[160];
    csv << "parameter,index,analytic,numeric,relative_error\n";
    for (const GradProbe& p : report.probes) {
      std::snprintf(buf, sizeof buf, ",%zu,%.17g,%.17g,%.17g\n", p.index, p.analytic, p.numeric,
                    p.relative_error);
      csv << p.parameter << buf;
    }
    write_text_file(a.out, csv.str());
  }
  const bool pass = report.max_relative_error < a.tolerance;
  std::printf("max relative error %.3e over %zu probes (loss %.6g, %.2f s): %s\n",
              report.max_relative_error, report.probes.size(), report.loss, report.seconds,
              pass ? "pass" : "FAIL");
  return pass ? 0 : kDataError;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Keypoint matching and relative pose estimation on synthetic RGB-D scenes",
               "relpose"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-gen", "Generate a synthetic scene");
  synth_cmd->add_option("--config", synth.config, "SynthConfig JSON")->check(CLI::ExistingFile);
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--grid", synth.grid, "Cell grid RxC");
  synth_cmd->add_option("--views", synth.views, "Number of views");
  synth_cmd->add_option("--landmarks", synth.landmarks, "Number of landmarks");
  synth_cmd->add_option("--noise", synth.noise, "Descriptor noise sigma");
  synth_cmd->add_option("--outliers", synth.outliers, "Distractor share of keypoint cells");
  synth_cmd->add_option("--retrieval-n", synth.retrieval_n, "Candidates per retrieval list");

  TrainArgs tr;
  auto* train_sub = app.add_subcommand("train", "Train the matching layer and keypoint head");
  train_sub->add_option("--config", tr.config, "TrainConfig JSON")->check(CLI::ExistingFile);
  train_sub->add_option("--data", tr.data, "Scene manifest")->required();
  train_sub->add_option("--out", tr.out, "Checkpoint directory")->required();
  train_sub->add_option("--init", tr.init, "Checkpoint to start from");
  train_sub->add_option("--seed", tr.seed, "Initialization and shuffling seed");
  train_sub->add_option("--epochs", tr.epochs, "Override the configured epoch count");
  train_sub->add_option("--max-pairs", tr.max_pairs, "Use only the first N pairs");

  EvalArgs ev;
  auto* eval_sub = app.add_subcommand("eval-pairs", "Evaluate pairwise pose estimation");
  eval_sub->add_option("--pairs", ev.pairs, "Scene manifest")->required();
  eval_sub->add_option("--ckpt", ev.ckpt, "Checkpoint directory");
  eval_sub->add_option("--out", ev.out, "Metrics CSV")->required();
  eval_sub->add_option("--matcher", ev.matcher, "learned or baseline")->capture_default_str();
  eval_sub->add_option("--ratio", ev.ratio, "Baseline ratio-test threshold")->capture_default_str();
  eval_sub->add_option("--threshold", ev.threshold, "Match weight threshold")->capture_default_str();
  eval_sub->add_option("--inlier-px", ev.inlier_px, "Inlier threshold in pixels")->capture_default_str();
  eval_sub->add_option("--seed", ev.seed, "RANSAC seed");
  eval_sub->add_option("--max-pairs", ev.max_pairs, "Evaluate only the first N pairs");

  LocalizeArgs lo;
  auto* loc_sub = app.add_subcommand("localize", "Localize a query view against a database");
  loc_sub->add_option("--query", lo.query, "Query view id")->required();
  loc_sub->add_option("--db", lo.db, "Database manifest")->required();
  loc_sub->add_option("--retrieval", lo.retrieval, "Retrieval lists JSON")->required();
  loc_sub->add_option("--ckpt", lo.ckpt, "Checkpoint directory");
  loc_sub->add_option("--out", lo.out, "Pose JSON (stdout when omitted)");
  loc_sub->add_option("--matcher", lo.matcher, "learned or baseline")->capture_default_str();
  loc_sub->add_flag("--refine", lo.refine, "Pool nearby candidates and re-solve");
  loc_sub->add_option("--ratio", lo.ratio, "Baseline ratio-test threshold")->capture_default_str();
  loc_sub->add_option("--threshold", lo.threshold, "Match weight threshold")->capture_default_str();
  loc_sub->add_option("--inlier-px", lo.inlier_px, "RANSAC inlier threshold")->capture_default_str();
  loc_sub->add_option("--merge-dist", lo.merge_dist, "Refinement merge distance (m)")->capture_default_str();
  loc_sub->add_option("--seed", lo.seed, "RANSAC seed");

  std::size_t rows = 0, cols = 0;
  std::string curve_out;
  auto* hilbert_sub = app.add_subcommand("hilbert-dump", "Write the pseudo-Hilbert curve as CSV");
  hilbert_sub->add_option("--rows", rows, "Grid rows")->required()->check(CLI::PositiveNumber);
  hilbert_sub->add_option("--cols", cols, "Grid columns")->required()->check(CLI::PositiveNumber);
  hilbert_sub->add_option("--out", curve_out, "CSV path (stdout when omitted)");

  GradArgs gc;
  auto* grad_sub = app.add_subcommand("grad-check", "Compare tape gradients with finite differences");
  grad_sub->add_option("--grid", gc.grid, "Cell grid RxC")->capture_default_str();
  grad_sub->add_option("--seed", gc.seed, "Probe and scene seed");
  grad_sub->add_option("--probes", gc.probes, "Number of probed parameters")->capture_default_str();
  grad_sub->add_option("--widths", gc.widths, "Matching-layer widths")->delimiter(',');
  grad_sub->add_option("--tolerance", gc.tolerance, "Pass threshold")->capture_default_str();
  grad_sub->add_option("--out", gc.out, "Per-probe CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsage;
  }

  try {
    if (*synth_cmd) return synth_gen(synth);
    if (*train_sub) return train_cmd(tr);
    if (*eval_sub) return eval_pairs_cmd(ev);
    if (*loc_sub) return localize_cmd(lo);
    if (*hilbert_sub) return hilbert_dump(rows, cols, curve_out);
    if (*grad_sub) return grad_check_cmd(gc);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataError;
  }
  return kUsage;
}

}  // namespace relpose::cli
