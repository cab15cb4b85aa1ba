// nirvis: synth | train | infer | eval | ablate | validate
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nirvis/dataset.hpp"
#include "nirvis/experiment.hpp"
#include "nirvis/io.hpp"
#include "nirvis/networks.hpp"
#include "nirvis/runtime.hpp"
#include "nirvis/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nirvis;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

std::pair<int, int> parse_size(const std::string& text) {
  int h = 0, w = 0;
  char x = 0, extra = 0;
  if (std::sscanf(text.c_str(), "%d%c%d%c", &h, &x, &w, &extra) != 3 || (x != 'x' && x != 'X') || h <= 0 || w <= 0)
    throw ValidationError("--size must look like HxW, got '" + text + "'");
  return {h, w};
}

struct RunSetup {
  PipelineTopology topology;
  TrainConfig config;
};

/// Preset, then the config file ({"training": {...}, "topology": {...}}),
/// then the ablation switches.
RunSetup make_setup(const std::string& preset, const std::string& config_path, int ablation, int epochs) {
  RunSetup s;
  if (preset == "paper") {
    s.topology = PipelineTopology::full_scale();
    s.config = TrainConfig::full_scale();
  } else if (preset != "desk") {
    throw ValidationError("--preset must be desk or paper, got '" + preset + "'");
  }
  if (!config_path.empty()) {
    if (!fs::exists(config_path)) throw DataError("config file '" + config_path + "' does not exist");
    const json j = io::read_json(config_path);
    if (!j.is_object()) throw ValidationError("config file must hold a JSON object");
    for (const auto& [key, value] : j.items())
      if (key != "training" && key != "topology")
        throw ValidationError("config file: unknown key '" + key + "' (expected training, topology)");
    try {
      if (j.contains("training")) merge_json(j.at("training"), s.config);
      if (j.contains("topology")) {
        json base = s.topology;
        base.merge_patch(j.at("topology"));
        s.topology = base.get<PipelineTopology>();
      }
    } catch (const json::exception& e) {
      throw ValidationError("config file '" + config_path + "': " + e.what());
    }
  }
  if (epochs >= 0) s.config.epochs = epochs;
  apply_condition(ablation_condition(ablation), s.topology, s.config);
  s.topology.validate();
  s.config.validate();
  return s;
}

void print_epoch(const EpochStats& st) {
  std::printf("epoch %d  lr %.3g  total %.6g  separation %.6g  restoration %.6g  (%.1fs)\n", st.epoch, st.lr, st.total,
              st.separation, st.restoration, st.seconds);
  std::fflush(stdout);
}

Raster preview(const Raster& r) {
  if (r.channels() != 3 || r.space() != ColorSpace::RGB) return r;
  try {
    return gray_world_white_balance(r);
  } catch (const ValidationError&) {
    return r;  // a black channel cannot be balanced
  }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  int scenes = 0;
  std::string size = "64x64";
  std::uint64_t seed = 0;
  std::string noise = "on";
  bool cfa = false;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  SynthesisConfig cfg;
  cfg.scenes = a.scenes;
  std::tie(cfg.height, cfg.width) = parse_size(a.size);
  cfg.seed = a.seed;
  cfg.noise = a.noise == "on";
  cfg.cfa = a.cfa;
  synthesize_dataset(cfg, a.out);
  std::cout << (fs::path(a.out) / "manifest.json").string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, config, out, preset = "desk";
  int ablation = 1;
  int epochs = -1;
  bool resume = false;
};

int cmd_train(const TrainArgs& a) {
  const RunSetup s = make_setup(a.preset, a.config, a.ablation, a.epochs);
  const Manifest m = read_manifest(a.data);
  const auto train = load_split(a.data, m, m.train_ids);
  Pipeline<float> net(s.topology, s.config.seed);
  Trainer trainer(net, s.config);
  if (a.resume && fs::exists(fs::path(a.out) / "trainer_state.json")) trainer.resume(a.out);
  trainer.train(train, a.out, print_epoch);
  std::cout << "checkpoint " << a.out << "\n";
  return 0;
}

struct InferArgs {
  std::string ckpt, input, out;
  bool intermediates = false;
};

int cmd_infer(const InferArgs& a) {
  const Pipeline<float> net = io::load_checkpoint<float>(a.ckpt);
  const Raster mixed = io::load_image(a.input);
  const int mult = net.topology().spatial_multiple();
  if (mixed.channels() != 3) throw DataError("input must be an RGB image, got " + std::to_string(mixed.channels()) + " channels");
  if (mixed.height() % mult || mixed.width() % mult) {
    const auto down = [mult](int v) { return std::max(mult, v / mult * mult); };
    throw ValidationError("input is " + std::to_string(mixed.height()) + "x" + std::to_string(mixed.width()) +
                          " but this checkpoint needs multiples of " + std::to_string(mult) + "; resize or crop to " +
                          std::to_string(down(mixed.height())) + "x" + std::to_string(down(mixed.width())));
  }
  const PipelineResult r = run_pipeline(net, mixed);
  const fs::path out = a.out;
  fs::create_directories(out);
  io::save_raster(out / "final", r.final_rgb, {"final", 0, json::object()});
  io::save_png(out / "final.png", preview(r.final_rgb));
  if (a.intermediates) {
    const std::vector<std::pair<std::string, const std::optional<Raster>*>> extra = {
        {"nir_est", &r.nir_est}, {"proportion", &r.proportion}, {"vis_est", &r.vis_est},
        {"y_restored", &r.y_restored}, {"chroma", &r.chroma}};
    for (const auto& [name, raster] : extra)
      if (raster->has_value()) io::save_png(out / (name + ".png"), preview(**raster));
  }
  std::cout << (out / "final.png").string() << "\n";
  return 0;
}

/// stem -> path; a .f32 raster wins over a .png preview of the same name.
std::map<std::string, fs::path> image_set(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("'" + dir.string() + "' is not a directory");
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext != ".f32" && ext != ".png") continue;
    const std::string stem = e.path().stem().string();
    if (ext == ".f32" || !out.count(stem)) out[stem] = e.path();
  }
  return out;
}

struct EvalArgs {
  std::string pred, gt, report;
};

int cmd_eval(const EvalArgs& a) {
  const auto pred = image_set(a.pred), gt = image_set(a.gt);
  std::vector<std::string> unmatched;
  for (const auto& [k, v] : pred)
    if (!gt.count(k)) unmatched.push_back(k + " (prediction only)");
  for (const auto& [k, v] : gt)
    if (!pred.count(k)) unmatched.push_back(k + " (ground truth only)");
  if (!unmatched.empty()) {
    std::string msg = "unmatched file sets:";
    for (const auto& u : unmatched) msg += " " + u;
    throw DataError(msg);
  }
  if (pred.empty()) throw DataError("no .f32 or .png images in '" + a.pred + "'");
  std::vector<metrics::ImageScores> scores;
  for (const auto& [name, path] : pred) {
    const Raster p = io::load_image(path), g = io::load_image(gt.at(name));
    if (!p.same_shape(g)) throw DataError("'" + name + "': prediction and ground truth differ in shape");
    scores.push_back(metrics::score(name, p, g));
  }
  const auto report = metrics::aggregate(scores);
  io::write_json(a.report, metrics::to_json(report));
  std::cout << metrics::to_json(report)["mean"].dump() << "\n";
  return 0;
}

struct AblateArgs {
  std::string data, conditions = "1..10", report, config, preset = "desk", work;
  int epochs = -1;
};

int cmd_ablate(const AblateArgs& a) {
  const std::vector<int> ids = parse_condition_list(a.conditions);
  const Manifest m = read_manifest(a.data);
  const auto train = load_split(a.data, m, m.train_ids);
  const auto test = load_split(a.data, m, m.test_ids);
  const fs::path work = a.work.empty() ? fs::path(a.report).parent_path() / "ablation_runs" : fs::path(a.work);
  std::vector<AblationRow> rows;
  for (int id : ids) {
    const RunSetup s = make_setup(a.preset, a.config, 1, a.epochs);
    std::printf("condition %d: %s\n", id, ablation_condition(id).label.c_str());
    rows.push_back(run_condition(id, s.topology, s.config, train, test, work / ("condition_" + std::to_string(id)),
                                 print_epoch));
    std::printf("condition %d  psnr %.4f  ssim %.4f\n", id, rows.back().psnr, rows.back().ssim);
    io::write_json(a.report, to_json(rows));
  }
  return 0;
}

int cmd_validate(const std::string& data) {
  const auto violations = validate_manifest(data);
  std::cout << to_json(violations).dump(2) << "\n";
  return violations.empty() ? 0 : kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Synthetic VIS/NIR mixed-signal pipeline: data synthesis, training, inference, evaluation"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Synthesize a dataset");
  synth->add_option("--scenes", sa.scenes, "Number of scenes")->required();
  synth->add_option("--size", sa.size, "Image size HxW");
  synth->add_option("--seed", sa.seed, "Seed");
  synth->add_option("--noise", sa.noise, "Sensor noise")->check(CLI::IsMember({"on", "off"}));
  synth->add_flag("--cfa", sa.cfa, "Store raw Bayer mosaics instead of demosaiced RGB");
  synth->add_option("--out", sa.out, "Output directory")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a pipeline");
  train->add_option("--data", ta.data, "Dataset directory")->required();
  train->add_option("--config", ta.config, "JSON config file")->required();
  train->add_option("--out", ta.out, "Checkpoint directory")->required();
  train->add_option("--preset", ta.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  train->add_option("--ablation", ta.ablation, "Ablation condition 1..10")->check(CLI::Range(1, 10));
  train->add_option("--epochs", ta.epochs, "Override the epoch count")->check(CLI::NonNegativeNumber);
  train->add_flag("--resume", ta.resume, "Continue from the state in --out");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Run a checkpoint on one mixed image");
  infer->add_option("--ckpt", ia.ckpt, "Checkpoint directory")->required();
  infer->add_option("--input", ia.input, "Mixed image (.f32 raster or .png)")->required();
  infer->add_option("--out", ia.out, "Output directory")->required();
  infer->add_flag("--intermediates", ia.intermediates, "Also write nir_est, proportion, vis_est, y_restored, chroma");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
  eval->add_option("--pred", ea.pred, "Prediction directory")->required();
  eval->add_option("--gt", ea.gt, "Ground-truth directory")->required();
  eval->add_option("--report", ea.report, "JSON report path")->required();

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "Train and score ablation conditions");
  ablate->add_option("--data", aa.data, "Dataset directory")->required();
  ablate->add_option("--conditions", aa.conditions, "e.g. 1..10 or 1,5");
  ablate->add_option("--report", aa.report, "JSON report path")->required();
  ablate->add_option("--config", aa.config, "JSON config file");
  ablate->add_option("--preset", aa.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  ablate->add_option("--epochs", aa.epochs, "Override the epoch count")->check(CLI::NonNegativeNumber);
  ablate->add_option("--work", aa.work, "Directory for per-condition checkpoints");

  std::string va;
  auto* validate = app.add_subcommand("validate", "Check a dataset directory");
  validate->add_option("--data", va, "Dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*train) return cmd_train(ta);
    if (*infer) return cmd_infer(ia);
    if (*eval) return cmd_eval(ea);
    if (*ablate) return cmd_ablate(aa);
    if (*validate) return cmd_validate(va);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
