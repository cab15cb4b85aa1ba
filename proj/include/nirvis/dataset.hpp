#pragma once

// Synthetic VIS/NIR/MIX dataset on disk.
//
//   <root>/manifest.json
//   <root>/scene_<id>_<phase>/<role>.f32 (+ .json sidecar, + .png preview)
//
// Every physical scene is captured twice: a daytime triple (mixed, vis, nir)
// and a nighttime quadruple that adds the long-exposure VIS reference. The
// deviation map is stored next to the roles as ground truth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "nirvis/error.hpp"
#include "nirvis/image.hpp"
#include "nirvis/io.hpp"
#include "nirvis/rng.hpp"
#include "nirvis/sensor_sim.hpp"

namespace nirvis {

namespace fs = std::filesystem;

/// Knobs of the synthesis driver. The defaults put daytime VIS around 35% of
/// full scale, nighttime NIR around 45%, nighttime VIS around 1.6% and its
/// long exposure around 16%.
struct SynthesisConfig {
  int scenes = 4;
  int height = 64;
  int width = 64;
  std::uint64_t seed = 0;
  bool noise = true;
  bool cfa = false;  // pass every capture through mosaic + demosaic

  double day_vis_level = 440.0;
  double night_vis_level = 2.0;
  double nir_level = 450.0;
  double nir_continuum = 0.05;  // flat NIR floor from 700 nm, relative to the LED peak
  double day_exposure = 0.08;
  double night_exposure = 0.8;
  double long_exposure_factor = 10.0;
  bool zero_gap_band = false;  // sensor blind between 700 and 850 nm

  SensorConfig sensor;
  FilterModel filters;

  void validate() const {
    if (scenes < 2) throw ValidationError("synthesis needs at least 2 scenes to form a train/test split");
    detail::require(height > 0 && width > 0, "synthesis: image size must be positive");
    if (cfa) detail::require(height % 2 == 0 && width % 2 == 0, "synthesis: CFA mode needs even dimensions");
    for (double v : {day_vis_level, night_vis_level, nir_level, nir_continuum})
      detail::require(v >= 0.0 && std::isfinite(v), "synthesis: illumination levels must be non-negative");
    detail::require(day_exposure > 0.0 && night_exposure > 0.0 && long_exposure_factor > 0.0,
                    "synthesis: exposures must be positive");
    sensor.validate();
  }
};

inline void to_json(nlohmann::json& j, const SynthesisConfig& c) {
  j = {{"scenes", c.scenes},
       {"height", c.height},
       {"width", c.width},
       {"seed", c.seed},
       {"noise", c.noise},
       {"cfa", c.cfa},
       {"day_vis_level", c.day_vis_level},
       {"night_vis_level", c.night_vis_level},
       {"nir_level", c.nir_level},
       {"nir_continuum", c.nir_continuum},
       {"day_exposure", c.day_exposure},
       {"night_exposure", c.night_exposure},
       {"long_exposure_factor", c.long_exposure_factor},
       {"zero_gap_band", c.zero_gap_band},
       {"sensor", c.sensor},
       {"filters", c.filters}};
}

inline void from_json(const nlohmann::json& j, SynthesisConfig& c) {
  SynthesisConfig d;
  c.scenes = j.value("scenes", d.scenes);
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
  c.seed = j.value("seed", d.seed);
  c.noise = j.value("noise", d.noise);
  c.cfa = j.value("cfa", d.cfa);
  c.day_vis_level = j.value("day_vis_level", d.day_vis_level);
  c.night_vis_level = j.value("night_vis_level", d.night_vis_level);
  c.nir_level = j.value("nir_level", d.nir_level);
  c.nir_continuum = j.value("nir_continuum", d.nir_continuum);
  c.day_exposure = j.value("day_exposure", d.day_exposure);
  c.night_exposure = j.value("night_exposure", d.night_exposure);
  c.long_exposure_factor = j.value("long_exposure_factor", d.long_exposure_factor);
  c.zero_gap_band = j.value("zero_gap_band", d.zero_gap_band);
  c.sensor = j.contains("sensor") ? j.at("sensor").get<SensorConfig>() : d.sensor;
  c.filters = j.contains("filters") ? j.at("filters").get<FilterModel>() : d.filters;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string config_hash(const SynthesisConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(nlohmann::json(c).dump())));
  return buf;
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  int id = 0;
  Phase phase = Phase::Day;
  std::map<std::string, std::string> roles;  // role -> path relative to the root
  std::string deviation;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::vector<ManifestEntry> scenes;
  std::vector<int> train_ids;
  std::vector<int> test_ids;
  std::string config_hash;
  SynthesisConfig synthesis;

  const ManifestEntry* find(int id, Phase phase) const {
    for (const auto& e : scenes)
      if (e.id == id && e.phase == phase) return &e;
    return nullptr;
  }

  std::size_t role_file_count() const {
    std::size_t n = 0;
    for (const auto& e : scenes) n += e.roles.size();
    return n;
  }

  friend bool operator==(const Manifest& a, const Manifest& b) {
    return a.scenes == b.scenes && a.train_ids == b.train_ids && a.test_ids == b.test_ids &&
           a.config_hash == b.config_hash && nlohmann::json(a.synthesis) == nlohmann::json(b.synthesis);
  }
};

inline std::vector<std::string> required_roles(Phase p) {
  if (p == Phase::Day) return {"mixed", "vis", "nir"};
  return {"mixed", "vis", "vis_long", "nir"};
}

inline void to_json(nlohmann::json& j, const ManifestEntry& e) {
  j = {{"id", e.id}, {"phase", to_string(e.phase)}, {"roles", e.roles}, {"deviation", e.deviation}};
}

inline void from_json(const nlohmann::json& j, ManifestEntry& e) {
  e.id = j.at("id").get<int>();
  e.phase = phase_from_string(j.at("phase").get<std::string>());
  e.roles = j.at("roles").get<std::map<std::string, std::string>>();
  e.deviation = j.value("deviation", std::string());
}

inline void to_json(nlohmann::json& j, const Manifest& m) {
  j = {{"format", "nirvis-dataset-1"},
       {"config_hash", m.config_hash},
       {"synthesis", m.synthesis},
       {"scenes", m.scenes},
       {"split", {{"train", m.train_ids}, {"test", m.test_ids}}}};
}

inline void from_json(const nlohmann::json& j, Manifest& m) {
  m.config_hash = j.value("config_hash", std::string());
  m.synthesis = j.contains("synthesis") ? j.at("synthesis").get<SynthesisConfig>() : SynthesisConfig{};
  m.scenes = j.at("scenes").get<std::vector<ManifestEntry>>();
  m.train_ids = j.at("split").at("train").get<std::vector<int>>();
  m.test_ids = j.at("split").at("test").get<std::vector<int>>();
}

inline Manifest read_manifest(const fs::path& root) {
  const auto path = fs::is_directory(root) ? root / "manifest.json" : root;
  try {
    return io::read_json(path).get<Manifest>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest '" + path.string() + "': " + e.what());
  } catch (const ValidationError& e) {
    throw DataError("malformed manifest '" + path.string() + "': " + e.what());
  }
}

inline void write_manifest(const fs::path& root, const Manifest& m) { io::write_json(root / "manifest.json", m); }

/// 14 test scenes from 102 scenes upward, otherwise ceil(15%), always leaving
/// at least one scene on each side.
inline int test_scene_count(int scenes) {
  const int n = scenes >= 102 ? 14 : static_cast<int>(std::ceil(0.15 * scenes));
  return std::clamp(n, 1, scenes - 1);
}

inline std::pair<std::vector<int>, std::vector<int>> split_scenes(int scenes, std::uint64_t seed) {
  std::vector<int> ids(static_cast<std::size_t>(scenes));
  for (int i = 0; i < scenes; ++i) ids[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, 0x5EB17ull));
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  const auto n_test = static_cast<std::size_t>(test_scene_count(scenes));
  std::vector<int> test(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<int> train(ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {train, test};
}

// ---------------------------------------------------------------------------
// Synthesis

inline std::string scene_dir_name(int id, Phase phase) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "scene_%04d_%s", id, to_string(phase).c_str());
  return buf;
}

/// Day and night captures of one physical scene.
struct ScenePair {
  SceneTriple day;
  SceneTriple night;
};

inline ScenePair synthesize_scene(const SynthesisConfig& cfg, int id) {
  const SpectralGrid grid;
  const SceneSpec scene = generate_scene(cfg.height, cfg.width, derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(id)), grid);
  const auto illum = day_night_schedule(grid, cfg.day_vis_level, cfg.night_vis_level, cfg.nir_level, cfg.nir_continuum);
  const auto sens = default_sensitivity(grid, cfg.zero_gap_band);
  Rng rng(derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(id) + 1));
  SimulatorOptions opt;
  opt.noise = cfg.noise;
  opt.long_exposure_factor = cfg.long_exposure_factor;
  opt.filters = cfg.filters;

  SensorConfig day_cfg = cfg.sensor, night_cfg = cfg.sensor;
  day_cfg.exposure = cfg.day_exposure;
  night_cfg.exposure = cfg.night_exposure;
  ScenePair out{synthesize_triple(scene, illum, 0, day_cfg, sens, rng, opt),
                synthesize_triple(scene, illum, 1, night_cfg, sens, rng, opt)};
  if (cfg.cfa) {
    for (SceneTriple* t : {&out.day, &out.night}) {
      for (Raster* r : {&t->mixed, &t->vis, &t->nir, &t->deviation}) *r = demosaic(mosaic(*r));
      if (t->vis_long) *t->vis_long = demosaic(mosaic(*t->vis_long));
    }
  }
  return out;
}

/// Writes the dataset and its manifest. Rerunning with the same config
/// reproduces every file byte for byte.
inline Manifest synthesize_dataset(const SynthesisConfig& cfg, const fs::path& root) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) throw DataError("cannot create dataset directory '" + root.string() + "'");

  Manifest m;
  m.synthesis = cfg;
  m.config_hash = config_hash(cfg);
  std::tie(m.train_ids, m.test_ids) = split_scenes(cfg.scenes, cfg.seed);
  const nlohmann::json sensor_json = cfg.sensor;

  for (int id = 0; id < cfg.scenes; ++id) {
    const ScenePair pair = synthesize_scene(cfg, id);
    for (const SceneTriple* t : {&pair.day, &pair.night}) {
      ManifestEntry e;
      e.id = id;
      e.phase = t->meta.phase;
      const std::string dir = scene_dir_name(id, e.phase);
      fs::create_directories(root / dir);
      nlohmann::json meta = sensor_json;
      meta["exposure"] = t->meta.config.exposure;
      meta["phase"] = to_string(e.phase);
      meta["noise"] = cfg.noise;
      auto emit = [&](const std::string& role, const Raster& r, double exposure) {
        nlohmann::json c = meta;
        c["exposure"] = exposure;
        io::save_raster(root / dir / role, r, {role, t->meta.scene_seed, c});
        io::save_png(root / dir / (role + ".png"), r);
        return dir + "/" + role + ".f32";
      };
      e.roles["mixed"] = emit("mixed", t->mixed, t->meta.config.exposure);
      e.roles["vis"] = emit("vis", t->vis, t->meta.config.exposure);
      e.roles["nir"] = emit("nir", t->nir, t->meta.config.exposure);
      if (t->vis_long) e.roles["vis_long"] = emit("vis_long", *t->vis_long, t->meta.config.exposure * cfg.long_exposure_factor);
      e.deviation = emit("deviation", t->deviation, t->meta.config.exposure);
      m.scenes.push_back(std::move(e));
    }
  }
  write_manifest(root, m);
  return m;
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string kind;  // manifest, missing_role, missing_file, unreadable, dimension, additivity, split
  int scene = -1;
  std::string role;
  std::string message;
};

inline nlohmann::json to_json(const std::vector<Violation>& vs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& v : vs) out.push_back({{"kind", v.kind}, {"scene", v.scene}, {"role", v.role}, {"message", v.message}});
  return out;
}

/// Checks role completeness, readable files, shared dimensions, the
/// additivity relation (noise-free datasets only) and split disjointness.
/// Never throws; every problem becomes a violation.
inline std::vector<Violation> validate_manifest(const fs::path& root) {
  std::vector<Violation> out;
  Manifest m;
  try {
    m = read_manifest(root);
  } catch (const std::exception& e) {
    out.push_back({"manifest", -1, "", e.what()});
    return out;
  }

  const double tolerance = 1.0 / m.synthesis.sensor.quant_levels() + 1e-6;
  std::set<int> ids;
  for (const auto& e : m.scenes) {
    ids.insert(e.id);
    std::map<std::string, Raster> loaded;
    for (const auto& role : required_roles(e.phase)) {
      auto it = e.roles.find(role);
      if (it == e.roles.end()) {
        out.push_back({"missing_role", e.id, role, "scene " + std::to_string(e.id) + " (" + to_string(e.phase) +
                                                       ") has no '" + role + "' entry"});
        continue;
      }
      const fs::path file = root / it->second;
      if (!fs::exists(file)) {
        out.push_back({"missing_role", e.id, role, "scene " + std::to_string(e.id) + " (" + to_string(e.phase) +
                                                       ") is missing '" + role + "' at " + file.string()});
        continue;
      }
      try {
        loaded.emplace(role, io::load_raster(file));
      } catch (const std::exception& ex) {
        out.push_back({"unreadable", e.id, role, ex.what()});
      }
    }
    std::optional<Raster> deviation;
    if (!e.deviation.empty()) {
      try {
        deviation = io::load_raster(root / e.deviation);
      } catch (const std::exception& ex) {
        out.push_back({"missing_file", e.id, "deviation", ex.what()});
      }
    }
    const Raster* ref = loaded.count("mixed") ? &loaded.at("mixed") : nullptr;
    for (const auto& [role, r] : loaded)
      if (ref && !r.same_shape(*ref))
        out.push_back({"dimension", e.id, role, "'" + role + "' dimensions differ from 'mixed'"});
    if (ref && deviation && !deviation->same_shape(*ref))
      out.push_back({"dimension", e.id, "deviation", "deviation dimensions differ from 'mixed'"});

    if (!m.synthesis.noise && ref && deviation && loaded.count("vis") && loaded.count("nir") &&
        deviation->same_shape(*ref) && loaded.at("vis").same_shape(*ref) && loaded.at("nir").same_shape(*ref)) {
      const double err = additivity_error(*ref, loaded.at("vis"), loaded.at("nir"), *deviation);
      if (err > tolerance)
        out.push_back({"additivity", e.id, "mixed",
                       "additivity error " + std::to_string(err) + " exceeds " + std::to_string(tolerance)});
    }
  }

  std::set<int> train(m.train_ids.begin(), m.train_ids.end());
  for (int id : m.test_ids)
    if (train.count(id)) out.push_back({"split", id, "", "scene " + std::to_string(id) + " is in both train and test"});
  for (int id : m.train_ids)
    if (!ids.count(id)) out.push_back({"split", id, "", "train id " + std::to_string(id) + " has no scene entry"});
  for (int id : m.test_ids)
    if (!ids.count(id)) out.push_back({"split", id, "", "test id " + std::to_string(id) + " has no scene entry"});
  return out;
}

// ---------------------------------------------------------------------------
// Loading

/// One aligned training example. vis_long is present for nighttime only.
struct TrainingSample {
  int id = 0;
  Phase phase = Phase::Day;
  Raster mixed;
  Raster vis;
  Raster nir;
  Raster deviation;
  std::optional<Raster> vis_long;

  /// Restoration target: the long exposure at night, the VIS capture by day.
  const Raster& reference() const { return vis_long ? *vis_long : vis; }
};

inline TrainingSample load_sample(const fs::path& root, const ManifestEntry& e) {
  TrainingSample s;
  s.id = e.id;
  s.phase = e.phase;
  auto role = [&](const std::string& name) {
    auto it = e.roles.find(name);
    if (it == e.roles.end())
      throw DataError("scene " + std::to_string(e.id) + " (" + to_string(e.phase) + ") has no '" + name + "' role");
    return io::load_raster(root / it->second);
  };
  s.mixed = role("mixed");
  s.vis = role("vis");
  s.nir = role("nir");
  if (e.phase == Phase::Night) s.vis_long = role("vis_long");
  s.deviation = e.deviation.empty() ? Raster(s.mixed.height(), s.mixed.width(), 3, ColorSpace::RGB)
                                    : io::load_raster(root / e.deviation);
  return s;
}

/// Samples for `ids` in request order.
inline std::vector<TrainingSample> load_batch(const fs::path& root, const Manifest& m, const std::vector<int>& ids,
                                              Phase phase) {
  std::vector<TrainingSample> out;
  out.reserve(ids.size());
  for (int id : ids) {
    const ManifestEntry* e = m.find(id, phase);
    if (!e) throw DataError("unknown scene id " + std::to_string(id) + " (" + to_string(phase) + ")");
    out.push_back(load_sample(root, *e));
  }
  return out;
}

/// Day and night samples of every id, day first per id.
inline std::vector<TrainingSample> load_split(const fs::path& root, const Manifest& m, const std::vector<int>& ids) {
  std::vector<TrainingSample> out;
  for (int id : ids)
    for (Phase p : {Phase::Day, Phase::Night})
      if (const ManifestEntry* e = m.find(id, p)) out.push_back(load_sample(root, *e));
  return out;
}

}  // namespace nirvis
