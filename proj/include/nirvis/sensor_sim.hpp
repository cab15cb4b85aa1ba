#pragma once

// Radiometric model of a Silicon sensor without a hot mirror.
//
//   I0 = T * A * U * sum_l L(l) t(l) q(l) dl            (released electrons)
//   I* = Poisson(I0) + Normal(0, sigma^2)                (shot + thermal noise)
//   S  = clamp(round((g * I* + V) / eta) / levels, 0, 1) (quantization)
//
// with L(l) = (vis_level * vis_illuminant(l) + nir_level * nir_illuminant(l)) * reflectance(l).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nirvis/error.hpp"
#include "nirvis/image.hpp"
#include "nirvis/rng.hpp"

namespace nirvis {

// ---------------------------------------------------------------------------
// Spectral grid and curves

struct SpectralGrid {
  double start_nm = 300.0;
  double step_nm = 10.0;
  int count = 66;  // 300..950 inclusive

  double wavelength(int i) const { return start_nm + step_nm * i; }
  double stop_nm() const { return wavelength(count - 1); }

  friend bool operator==(const SpectralGrid&, const SpectralGrid&) = default;
};

enum class CurveRole { Irradiance, Sensitivity, Transmittance, Reflectance };

inline std::string to_string(CurveRole r) {
  switch (r) {
    case CurveRole::Irradiance: return "irradiance";
    case CurveRole::Sensitivity: return "sensitivity";
    case CurveRole::Transmittance: return "transmittance";
    case CurveRole::Reflectance: return "reflectance";
  }
  return "?";
}

inline CurveRole curve_role_from_string(const std::string& s) {
  if (s == "irradiance") return CurveRole::Irradiance;
  if (s == "sensitivity") return CurveRole::Sensitivity;
  if (s == "transmittance") return CurveRole::Transmittance;
  if (s == "reflectance") return CurveRole::Reflectance;
  throw ValidationError("unknown curve role '" + s + "'");
}

/// Non-negative function of wavelength sampled on a SpectralGrid. Each sample
/// is the mean of the function over its bin.
class SpectralCurve {
 public:
  SpectralCurve() = default;
  SpectralCurve(SpectralGrid grid, CurveRole role, std::vector<double> values)
      : grid_(grid), role_(role), values_(std::move(values)) {
    validate();
  }

  static SpectralCurve constant(SpectralGrid grid, CurveRole role, double v) {
    return {grid, role, std::vector<double>(static_cast<std::size_t>(grid.count), v)};
  }

  template <class F>
  static SpectralCurve from_function(SpectralGrid grid, CurveRole role, F&& f) {
    std::vector<double> v(static_cast<std::size_t>(grid.count));
    for (int i = 0; i < grid.count; ++i) v[i] = f(grid.wavelength(i));
    return {grid, role, std::move(v)};
  }

  /// Gaussian emission line with unit peak, integrated analytically over each
  /// bin so that narrow lines are not lost between samples.
  static SpectralCurve gaussian_line(SpectralGrid grid, double center_nm, double fwhm_nm,
                                     CurveRole role = CurveRole::Irradiance) {
    detail::require(fwhm_nm > 0.0, "gaussian_line: FWHM must be positive");
    const double sigma = fwhm_nm / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
    const double scale = sigma * std::sqrt(std::numbers::pi / 2.0);
    std::vector<double> v(static_cast<std::size_t>(grid.count));
    for (int i = 0; i < grid.count; ++i) {
      const double lo = grid.wavelength(i) - 0.5 * grid.step_nm;
      const double hi = grid.wavelength(i) + 0.5 * grid.step_nm;
      const double integral = scale * (std::erf((hi - center_nm) / (std::numbers::sqrt2 * sigma)) -
                                       std::erf((lo - center_nm) / (std::numbers::sqrt2 * sigma)));
      v[i] = integral / grid.step_nm;
    }
    return {grid, role, std::move(v)};
  }

  const SpectralGrid& grid() const { return grid_; }
  CurveRole role() const { return role_; }
  const std::vector<double>& values() const { return values_; }
  double operator[](int i) const { return values_[i]; }
  int size() const { return static_cast<int>(values_.size()); }

  double sum() const {
    double s = 0.0;
    for (double v : values_) s += v;
    return s;
  }

  void validate() const {
    if (static_cast<int>(values_.size()) != grid_.count)
      throw ConfigError("spectral curve length " + std::to_string(values_.size()) +
                        " does not match grid length " + std::to_string(grid_.count));
    for (double v : values_) {
      detail::require(std::isfinite(v) && v >= 0.0, "spectral curve values must be finite and non-negative");
      if (role_ == CurveRole::Transmittance || role_ == CurveRole::Reflectance)
        detail::require(v <= 1.0, "transmittance/reflectance values must not exceed 1");
    }
  }

  friend bool operator==(const SpectralCurve&, const SpectralCurve&) = default;

 private:
  SpectralGrid grid_;
  CurveRole role_ = CurveRole::Irradiance;
  std::vector<double> values_;
};

inline void require_same_grid(const SpectralGrid& a, const SpectralGrid& b, const char* what) {
  if (!(a == b)) throw ConfigError(std::string("spectral grid mismatch: ") + what);
}

// ---------------------------------------------------------------------------
// Sensor configuration

struct SensorConfig {
  double gain = 1.0;          // g
  double bias = 0.0;          // V
  double quant_step = 1.0;    // eta
  double exposure = 0.08;     // T, seconds
  double area = 1.0;          // A
  double modulation = 1.0;    // U
  double thermal_sigma = 2.0; // sigma, electrons
  double full_scale = 4095.0; // electrons mapped to digital 1.0

  /// Number of code steps between 0 and 1.
  double quant_levels() const { return std::round(full_scale * gain / quant_step); }

  void validate() const {
    detail::require(quant_step > 0.0, "sensor: quantization step must be positive");
    detail::require(gain > 0.0, "sensor: gain must be positive");
    detail::require(exposure > 0.0, "sensor: exposure must be positive");
    detail::require(area > 0.0, "sensor: area must be positive");
    detail::require(modulation > 0.0, "sensor: modulation must be positive");
    detail::require(thermal_sigma >= 0.0, "sensor: thermal sigma must be non-negative");
    detail::require(full_scale > 0.0, "sensor: full scale must be positive");
    detail::require(quant_levels() >= 1.0, "sensor: fewer than one quantization level");
    detail::require(std::isfinite(bias), "sensor: bias must be finite");
  }

  friend bool operator==(const SensorConfig&, const SensorConfig&) = default;
};

// ---------------------------------------------------------------------------
// Optical filters

enum class Band { Full, VisPass, NirPass, Gap, VisNir };

/// Shortpass / longpass pair. slope_nm == 0 gives ideal steps (decided on bin
/// centres: shortpass passes l < cut, longpass passes l >= cut); otherwise
/// logistic edges with that width.
struct FilterModel {
  double shortpass_cut_nm = 700.0;
  double longpass_cut_nm = 850.0;
  double slope_nm = 0.0;

  double shortpass(double l) const {
    if (slope_nm <= 0.0) return l < shortpass_cut_nm ? 1.0 : 0.0;
    return 1.0 / (1.0 + std::exp((l - shortpass_cut_nm) / slope_nm));
  }
  double longpass(double l) const {
    if (slope_nm <= 0.0) return l >= longpass_cut_nm ? 1.0 : 0.0;
    return 1.0 / (1.0 + std::exp((longpass_cut_nm - l) / slope_nm));
  }

  SpectralCurve transmittance(Band band, const SpectralGrid& grid) const {
    return SpectralCurve::from_function(grid, CurveRole::Transmittance, [&](double l) {
      const double sp = shortpass(l), lp = longpass(l);
      switch (band) {
        case Band::Full: return 1.0;
        case Band::VisPass: return sp;
        case Band::NirPass: return lp;
        case Band::VisNir: return std::min(1.0, sp + lp);
        case Band::Gap: return std::clamp(1.0 - sp - lp, 0.0, 1.0);
      }
      return 0.0;
    });
  }
};

// ---------------------------------------------------------------------------
// Illumination

enum class Phase { Day, Night };

inline std::string to_string(Phase p) { return p == Phase::Day ? "day" : "night"; }
inline Phase phase_from_string(const std::string& s) {
  if (s == "day") return Phase::Day;
  if (s == "night") return Phase::Night;
  throw ValidationError("unknown phase '" + s + "'");
}

struct IlluminationSlot {
  double vis_level = 0.0;
  Phase phase = Phase::Day;
};

/// VIS level varies per timestamp; the NIR LED is always on, so its level is a
/// single value for the whole schedule.
struct IlluminationSchedule {
  std::vector<IlluminationSlot> slots;
  double nir_level = 0.0;
  SpectralCurve vis_illuminant;
  SpectralCurve nir_illuminant;

  const IlluminationSlot& slot(std::size_t t) const {
    detail::require(t < slots.size(), "illumination timestamp out of range");
    return slots[t];
  }

  void validate() const {
    detail::require(nir_level >= 0.0 && std::isfinite(nir_level), "illumination: nir level must be non-negative");
    for (const auto& s : slots)
      detail::require(s.vis_level >= 0.0 && std::isfinite(s.vis_level), "illumination: vis level must be non-negative");
    require_same_grid(vis_illuminant.grid(), nir_illuminant.grid(), "vis vs nir illuminant");
    vis_illuminant.validate();
    nir_illuminant.validate();
    const auto& g = vis_illuminant.grid();
    for (int i = 0; i < g.count; ++i)
      if (g.wavelength(i) >= 700.0 && vis_illuminant[i] > 0.0)
        throw ValidationError("illumination: vis illuminant must have no support at or above 700 nm");
  }
};

/// Smooth daylight-like spectrum (5500 K Planck shape, unit peak) cut at 700 nm.
inline SpectralCurve daylight_illuminant(const SpectralGrid& grid) {
  auto planck = [](double l_nm) {
    const double l = l_nm * 1e-9;
    constexpr double c2 = 1.4388e-2;  // m K
    return 1.0 / (std::pow(l, 5) * (std::exp(c2 / (l * 5500.0)) - 1.0));
  };
  double peak = 0.0;
  for (int i = 0; i < grid.count; ++i) peak = std::max(peak, planck(grid.wavelength(i)));
  return SpectralCurve::from_function(grid, CurveRole::Irradiance,
                                      [&](double l) { return l < 700.0 ? planck(l) / peak : 0.0; });
}

/// 880 nm LED line (FWHM 15 nm) plus an optional flat NIR continuum, both
/// restricted to [700, stop]; the continuum is relative to the line's peak.
inline SpectralCurve led_illuminant(const SpectralGrid& grid, double center_nm = 880.0, double fwhm_nm = 15.0,
                                    double continuum = 0.0) {
  auto line = SpectralCurve::gaussian_line(grid, center_nm, fwhm_nm);
  std::vector<double> v = line.values();
  for (int i = 0; i < grid.count; ++i) v[i] = grid.wavelength(i) >= 700.0 ? v[i] + continuum : 0.0;
  return {grid, CurveRole::Irradiance, std::move(v)};
}

/// Two-slot schedule: slot 0 is daytime, slot 1 nighttime.
inline IlluminationSchedule day_night_schedule(const SpectralGrid& grid, double day_vis, double night_vis,
                                               double nir_level, double nir_continuum = 0.0) {
  IlluminationSchedule s;
  s.slots = {{day_vis, Phase::Day}, {night_vis, Phase::Night}};
  s.nir_level = nir_level;
  s.vis_illuminant = daylight_illuminant(grid);
  s.nir_illuminant = led_illuminant(grid, 880.0, 15.0, nir_continuum);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Sensitivities

using ChannelSensitivity = std::array<SpectralCurve, 3>;  // R, G, B

/// Gaussian CFA responses peaked at 600/540/460 nm plus one NIR lobe shared by
/// all three channels above 700 nm.
inline ChannelSensitivity default_sensitivity(const SpectralGrid& grid, bool zero_gap_band = false) {
  constexpr std::array<double, 3> centers{600.0, 540.0, 460.0};
  constexpr std::array<double, 3> peaks{0.90, 1.00, 0.80};
  constexpr double vis_sigma = 32.0;
  auto nir_lobe = [](double l) {
    const double onset = 1.0 / (1.0 + std::exp(-(l - 690.0) / 8.0));
    return 0.55 * onset * std::exp(-0.5 * std::pow((l - 790.0) / 90.0, 2));
  };
  ChannelSensitivity out;
  for (int c = 0; c < 3; ++c) {
    out[c] = SpectralCurve::from_function(grid, CurveRole::Sensitivity, [&](double l) {
      if (zero_gap_band && l >= 700.0 && l < 850.0) return 0.0;
      return peaks[c] * std::exp(-0.5 * std::pow((l - centers[c]) / vis_sigma, 2)) + nir_lobe(l);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenes

/// Per-pixel reflectance spectra.
struct SceneSpec {
  int height = 0;
  int width = 0;
  SpectralGrid grid;
  std::vector<double> reflectance;  // height * width * grid.count
  std::uint64_t seed = 0;

  const double* pixel(int y, int x) const {
    return reflectance.data() + (static_cast<std::size_t>(y) * width + x) * grid.count;
  }
  double* pixel(int y, int x) {
    return reflectance.data() + (static_cast<std::size_t>(y) * width + x) * grid.count;
  }

  void validate() const {
    detail::require(height > 0 && width > 0, "scene: dimensions must be positive");
    detail::require(reflectance.size() == static_cast<std::size_t>(height) * width * grid.count,
                    "scene: reflectance buffer size mismatch");
    for (double r : reflectance) detail::require(r >= 0.0 && r <= 1.0, "scene: reflectance outside [0,1]");
  }
};

namespace detail {

/// Smooth spectrum from a low-order cosine basis over the grid span.
inline std::vector<double> random_spectrum(Rng& rng, const SpectralGrid& grid) {
  const double base = rng.uniform(0.12, 0.85);
  std::array<double, 5> coef{};
  for (int k = 1; k < 5; ++k) coef[k] = rng.uniform(-0.28, 0.28) / k;
  std::vector<double> v(static_cast<std::size_t>(grid.count));
  const double span = grid.stop_nm() - grid.start_nm;
  for (int i = 0; i < grid.count; ++i) {
    const double u = (grid.wavelength(i) - grid.start_nm) / span;
    double r = base;
    for (int k = 1; k < 5; ++k) r += coef[k] * std::cos(k * std::numbers::pi * u);
    v[i] = std::clamp(r, 0.02, 0.98);
  }
  return v;
}

}  // namespace detail

/// Random piecewise scene: a gradient background with rectangles, some flat
/// and some with an internal gradient, so the image has sharp edges.
inline SceneSpec generate_scene(int height, int width, std::uint64_t seed, SpectralGrid grid = {}) {
  detail::require(height > 0 && width > 0, "scene: dimensions must be positive");
  Rng rng(seed);
  SceneSpec s;
  s.height = height;
  s.width = width;
  s.grid = grid;
  s.seed = seed;
  s.reflectance.assign(static_cast<std::size_t>(height) * width * grid.count, 0.0);
  const std::size_t nb = static_cast<std::size_t>(grid.count);

  auto paint = [&](int y0, int x0, int y1, int x1, const std::vector<double>& a, const std::vector<double>& b,
                   double dir_y, double dir_x) {
    const double len = std::max(1e-9, std::abs(dir_y) * (y1 - y0) + std::abs(dir_x) * (x1 - x0));
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        double u = ((y - y0) * std::abs(dir_y) + (x - x0) * std::abs(dir_x)) / len;
        if (dir_y < 0 || dir_x < 0) u = 1.0 - u;
        double* p = s.pixel(y, x);
        for (std::size_t i = 0; i < nb; ++i) p[i] = (1.0 - u) * a[i] + u * b[i];
      }
  };

  {
    auto a = detail::random_spectrum(rng, grid);
    auto b = detail::random_spectrum(rng, grid);
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    paint(0, 0, height, width, a, b, std::sin(ang), std::cos(ang));
  }
  const int rects = 5 + static_cast<int>(rng.below(6));
  for (int r = 0; r < rects; ++r) {
    const int rh = std::max(2, static_cast<int>(rng.uniform(0.15, 0.55) * height));
    const int rw = std::max(2, static_cast<int>(rng.uniform(0.15, 0.55) * width));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, height - rh + 1))));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, width - rw + 1))));
    auto a = detail::random_spectrum(rng, grid);
    const bool gradient = rng.uniform() < 0.35;
    auto b = gradient ? detail::random_spectrum(rng, grid) : a;
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    paint(y0, x0, std::min(height, y0 + rh), std::min(width, x0 + rw), a, b, std::sin(ang), std::cos(ang));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Electron images

/// H x W x 3 electron counts (double precision).
struct ElectronImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// Noise-free electrons for one capture through the given filter band.
inline ElectronImage released_electrons(const SceneSpec& scene, const IlluminationSchedule& illum, std::size_t t,
                                        const ChannelSensitivity& sens, Band band, const SensorConfig& cfg,
                                        const FilterModel& filters = {}) {
  cfg.validate();
  scene.validate();
  illum.validate();
  const SpectralGrid& grid = scene.grid;
  require_same_grid(grid, illum.vis_illuminant.grid(), "scene vs illuminant");
  for (const auto& q : sens) {
    require_same_grid(grid, q.grid(), "scene vs sensitivity");
    q.validate();
  }
  const IlluminationSlot& slot = illum.slot(t);
  const SpectralCurve trans = filters.transmittance(band, grid);

  const double tau = cfg.exposure * cfg.area * cfg.modulation;
  const std::size_t nb = static_cast<std::size_t>(grid.count);
  std::array<std::vector<double>, 3> weight;
  for (int c = 0; c < 3; ++c) {
    weight[c].resize(nb);
    for (std::size_t i = 0; i < nb; ++i) {
      const double irradiance = slot.vis_level * illum.vis_illuminant[static_cast<int>(i)] +
                                illum.nir_level * illum.nir_illuminant[static_cast<int>(i)];
      weight[c][i] = tau * grid.step_nm * irradiance * trans[static_cast<int>(i)] * sens[c][static_cast<int>(i)];
    }
  }

  ElectronImage out{scene.height, scene.width, std::vector<double>(static_cast<std::size_t>(scene.height) * scene.width * 3)};
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      const double* refl = scene.pixel(y, x);
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < nb; ++i) acc += refl[i] * weight[c][i];
        out.at(y, x, c) = acc;
      }
    }
  return out;
}

/// Shot noise (Poisson) plus thermal noise (Gaussian). With enabled == false
/// the input is returned unchanged.
inline ElectronImage apply_noise(const ElectronImage& i0, const SensorConfig& cfg, Rng& rng, bool enabled = true) {
  cfg.validate();
  for (double v : i0.data)
    detail::require(std::isfinite(v) && v >= 0.0, "apply_noise: electron counts must be non-negative");
  if (!enabled) return i0;
  ElectronImage out = i0;
  for (double& v : out.data) {
    const double shot = rng.poisson(v);
    v = cfg.thermal_sigma > 0.0 ? shot + cfg.thermal_sigma * rng.normal() : shot;
  }
  return out;
}

/// Round half away from zero (std::round semantics, spelled out).
inline double round_half_away(double v) { return std::round(v); }

inline double quantize_value(double electrons, const SensorConfig& cfg) {
  const double code = round_half_away((cfg.gain * electrons + cfg.bias) / cfg.quant_step);
  return std::clamp(code / cfg.quant_levels(), 0.0, 1.0);
}

inline Raster quantize(const ElectronImage& e, const SensorConfig& cfg) {
  cfg.validate();
  Raster out(e.height, e.width, 3, ColorSpace::RGB);
  auto d = out.data();
  for (std::size_t i = 0; i < e.data.size(); ++i) d[i] = static_cast<float>(quantize_value(e.data[i], cfg));
  return out;
}

// ---------------------------------------------------------------------------
// Aligned captures

struct SimulatorOptions {
  bool noise = true;
  double long_exposure_factor = 10.0;  // 8 s vs 0.8 s
  FilterModel filters;
};

struct TripleMeta {
  SensorConfig config;
  std::size_t timestamp = 0;
  Phase phase = Phase::Day;
  std::uint64_t scene_seed = 0;
};

struct SceneTriple {
  Raster mixed;
  Raster vis;
  Raster nir;
  Raster deviation;
  std::optional<Raster> vis_long;  // nighttime only
  TripleMeta meta;
};

/// Captures the mixed, VIS-pass and NIR-pass images of one scene at one
/// timestamp. The deviation map is the contribution of the band passed by
/// neither filter to the noise-free mixed code: D = Q(E_full) - Q(E_vis + E_nir).
inline SceneTriple synthesize_triple(const SceneSpec& scene, const IlluminationSchedule& illum, std::size_t t,
                                     const SensorConfig& cfg, const ChannelSensitivity& sens, Rng& rng,
                                     const SimulatorOptions& opt = {}) {
  const auto& f = opt.filters;
  const ElectronImage full = released_electrons(scene, illum, t, sens, Band::Full, cfg, f);
  const ElectronImage vis = released_electrons(scene, illum, t, sens, Band::VisPass, cfg, f);
  const ElectronImage nir = released_electrons(scene, illum, t, sens, Band::NirPass, cfg, f);
  const ElectronImage vis_nir = released_electrons(scene, illum, t, sens, Band::VisNir, cfg, f);

  SceneTriple out;
  out.mixed = quantize(apply_noise(full, cfg, rng, opt.noise), cfg);
  out.vis = quantize(apply_noise(vis, cfg, rng, opt.noise), cfg);
  out.nir = quantize(apply_noise(nir, cfg, rng, opt.noise), cfg);

  const Raster q_full = quantize(full, cfg);
  const Raster q_vis_nir = quantize(vis_nir, cfg);
  out.deviation = Raster(scene.height, scene.width, 3, ColorSpace::RGB);
  for (std::size_t i = 0; i < out.deviation.size(); ++i)
    out.deviation.storage()[i] = std::max(0.0f, q_full.storage()[i] - q_vis_nir.storage()[i]);

  const IlluminationSlot& slot = illum.slot(t);
  if (slot.phase == Phase::Night) {
    SensorConfig long_cfg = cfg;
    long_cfg.exposure *= opt.long_exposure_factor;
    const ElectronImage vis_long = released_electrons(scene, illum, t, sens, Band::VisPass, long_cfg, f);
    out.vis_long = quantize(apply_noise(vis_long, long_cfg, rng, opt.noise), long_cfg);
  }
  out.meta = {cfg, t, slot.phase, scene.seed};
  return out;
}

/// max |S_m - clamp(S_v + S_n + D, 0, 1)| over all samples.
inline double additivity_error(const Raster& mixed, const Raster& vis, const Raster& nir, const Raster& deviation) {
  detail::require(mixed.same_shape(vis) && mixed.same_shape(nir) && mixed.same_shape(deviation),
                  "additivity check: raster shapes differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    const double sum = std::clamp(static_cast<double>(vis.storage()[i]) + nir.storage()[i] + deviation.storage()[i], 0.0, 1.0);
    worst = std::max(worst, std::abs(mixed.storage()[i] - sum));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const SpectralGrid& g) {
  j = {{"start_nm", g.start_nm}, {"step_nm", g.step_nm}, {"count", g.count}};
}
inline void from_json(const nlohmann::json& j, SpectralGrid& g) {
  g.start_nm = j.at("start_nm").get<double>();
  g.step_nm = j.at("step_nm").get<double>();
  g.count = j.at("count").get<int>();
}

inline void to_json(nlohmann::json& j, const SpectralCurve& c) {
  j = {{"grid", c.grid()}, {"role", to_string(c.role())}, {"values", c.values()}};
}
inline void from_json(const nlohmann::json& j, SpectralCurve& c) {
  c = SpectralCurve(j.at("grid").get<SpectralGrid>(), curve_role_from_string(j.at("role").get<std::string>()),
                    j.at("values").get<std::vector<double>>());
}

inline void to_json(nlohmann::json& j, const SensorConfig& c) {
  j = {{"gain", c.gain},         {"bias", c.bias},
       {"quant_step", c.quant_step}, {"exposure", c.exposure},
       {"area", c.area},         {"modulation", c.modulation},
       {"thermal_sigma", c.thermal_sigma}, {"full_scale", c.full_scale}};
}
inline void from_json(const nlohmann::json& j, SensorConfig& c) {
  SensorConfig d;
  c.gain = j.value("gain", d.gain);
  c.bias = j.value("bias", d.bias);
  c.quant_step = j.value("quant_step", d.quant_step);
  c.exposure = j.value("exposure", d.exposure);
  c.area = j.value("area", d.area);
  c.modulation = j.value("modulation", d.modulation);
  c.thermal_sigma = j.value("thermal_sigma", d.thermal_sigma);
  c.full_scale = j.value("full_scale", d.full_scale);
  c.validate();
}

inline void to_json(nlohmann::json& j, const FilterModel& f) {
  j = {{"shortpass_cut_nm", f.shortpass_cut_nm}, {"longpass_cut_nm", f.longpass_cut_nm}, {"slope_nm", f.slope_nm}};
}
inline void from_json(const nlohmann::json& j, FilterModel& f) {
  FilterModel d;
  f.shortpass_cut_nm = j.value("shortpass_cut_nm", d.shortpass_cut_nm);
  f.longpass_cut_nm = j.value("longpass_cut_nm", d.longpass_cut_nm);
  f.slope_nm = j.value("slope_nm", d.slope_nm);
}

}  // namespace nirvis
