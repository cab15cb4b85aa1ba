#pragma once

// Held-out evaluation of a trained pipeline and the ten ablation conditions.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nirvis/dataset.hpp"
#include "nirvis/metrics.hpp"
#include "nirvis/networks.hpp"
#include "nirvis/training.hpp"

namespace nirvis {

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  metrics::MetricReport final_rgb;  // final output vs restoration reference
  metrics::MetricReport day;
  metrics::MetricReport night;
  double nir_psnr = 0.0;              // mean PSNR(nir_est, S_n); 0 without Separation-Net
  double mixed_as_nir_psnr = 0.0;     // mean PSNR(mixed, S_n)
  double night_luma_restored_psnr = 0.0;  // mean PSNR(y_restored, Y(vis_long))
  double night_luma_vis_psnr = 0.0;       // mean PSNR(Y(vis_est), Y(vis_long))
};

inline std::string sample_name(const TrainingSample& s) { return scene_dir_name(s.id, s.phase); }

/// Scores every sample at full resolution. All metrics use 8-bit codes.
template <class T>
Evaluation evaluate(const Pipeline<T>& net, const std::vector<TrainingSample>& samples) {
  detail::require(!samples.empty(), "evaluate: no samples");
  Evaluation ev;
  std::vector<metrics::ImageScores> all, day, night;
  int nir_n = 0, night_n = 0;
  for (const auto& s : samples) {
    const PipelineResult r = run_pipeline(net, s.mixed);
    const auto sc = metrics::score(sample_name(s), r.final_rgb, s.reference());
    all.push_back(sc);
    (s.phase == Phase::Day ? day : night).push_back(sc);

    const Raster q_nir = metrics::to_domain(s.nir, metrics::Domain::Quantized8);
    ev.mixed_as_nir_psnr += metrics::psnr(metrics::to_domain(s.mixed, metrics::Domain::Quantized8), q_nir);
    if (r.nir_est) ev.nir_psnr += metrics::psnr(metrics::to_domain(*r.nir_est, metrics::Domain::Quantized8), q_nir);
    ++nir_n;

    if (s.phase == Phase::Night && r.y_restored) {
      const Raster y_ref = metrics::to_domain(luminance(s.reference()), metrics::Domain::Quantized8);
      const Raster& vis_src = r.vis_est ? *r.vis_est : s.mixed;
      ev.night_luma_restored_psnr += metrics::psnr(metrics::to_domain(*r.y_restored, metrics::Domain::Quantized8), y_ref);
      ev.night_luma_vis_psnr += metrics::psnr(metrics::to_domain(luminance(vis_src), metrics::Domain::Quantized8), y_ref);
      ++night_n;
    }
  }
  ev.final_rgb = metrics::aggregate(all);
  ev.day = metrics::aggregate(day);
  ev.night = metrics::aggregate(night);
  ev.nir_psnr /= nir_n;
  ev.mixed_as_nir_psnr /= nir_n;
  if (night_n > 0) {
    ev.night_luma_restored_psnr /= night_n;
    ev.night_luma_vis_psnr /= night_n;
  }
  return ev;
}

inline nlohmann::json to_json(const Evaluation& e) {
  return {{"final", metrics::to_json(e.final_rgb)},
          {"day_mean", metrics::to_json(e.day)["mean"]},
          {"night_mean", metrics::to_json(e.night)["mean"]},
          {"nir_psnr", metrics::number_or_inf(e.nir_psnr)},
          {"mixed_as_nir_psnr", metrics::number_or_inf(e.mixed_as_nir_psnr)},
          {"night_luma_restored_psnr", metrics::number_or_inf(e.night_luma_restored_psnr)},
          {"night_luma_vis_psnr", metrics::number_or_inf(e.night_luma_vis_psnr)}};
}

// ---------------------------------------------------------------------------
// Ablation conditions

struct AblationCondition {
  int id = 1;
  std::string label;
  LossTerms terms;
  bool separation = true;
  bool restoration = true;
  bool direct = false;  // one U-Net from mixed to RGB
  bool chroma_full_res = false;
  ColorSpace color_space = ColorSpace::YUV;
};

inline AblationCondition ablation_condition(int id) {
  AblationCondition c;
  c.id = id;
  switch (id) {
    case 1: c.label = "full model"; break;
    case 2:
      c.label = "MAE only";
      c.terms = {false, false, false};
      break;
    case 3:
      c.label = "MAE + SSIM";
      c.terms = {true, false, false};
      break;
    case 4:
      c.label = "MAE + SSIM + smoothness";
      c.terms = {true, true, false};
      break;
    case 5:
      c.label = "w/o separation, w/o restoration";
      c.separation = c.restoration = false;
      c.direct = true;
      break;
    case 6:
      c.label = "w/ separation, w/o restoration";
      c.restoration = false;
      break;
    case 7:
      c.label = "w/o separation, w/ restoration";
      c.separation = false;
      break;
    case 8:
      c.label = "colorization output x2";
      c.chroma_full_res = true;
      break;
    case 9:
      c.label = "HSV color space";
      c.color_space = ColorSpace::HSV;
      break;
    case 10:
      c.label = "RGB color space";
      c.color_space = ColorSpace::RGB;
      break;
    default: throw ValidationError("ablation condition must be in 1..10, got " + std::to_string(id));
  }
  return c;
}

/// Applies the condition's switches on top of a base configuration.
inline void apply_condition(const AblationCondition& c, PipelineTopology& topo, TrainConfig& cfg) {
  cfg.terms = c.terms;
  topo.use_separation = c.separation;
  topo.use_restoration = c.restoration;
  topo.direct_unet = c.direct;
  topo.chroma_full_res = c.chroma_full_res;
  topo.color_space = c.color_space;
}

/// Parses "1..10", "1,5,6" or "3".
inline std::vector<int> parse_condition_list(const std::string& text) {
  std::vector<int> out;
  auto parse_int = [&](const std::string& s) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) throw ValidationError("bad condition list '" + text + "'");
    return v;
  };
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const std::size_t dots = item.find("..");
    if (dots != std::string::npos) {
      const int a = parse_int(item.substr(0, dots)), b = parse_int(item.substr(dots + 2));
      if (a > b) throw ValidationError("bad condition range '" + item + "'");
      for (int i = a; i <= b; ++i) out.push_back(i);
    } else {
      out.push_back(parse_int(item));
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  for (int id : out) ablation_condition(id);
  return out;
}

struct AblationRow {
  int condition = 0;
  std::string label;
  double psnr = 0.0;
  double ssim = 0.0;
};

inline nlohmann::json to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"condition", r.condition}, {"label", r.label}, {"psnr", metrics::number_or_inf(r.psnr)}, {"ssim", r.ssim}});
  return {{"rows", out}};
}

/// Trains one condition from the shared seed and scores it on `test`.
inline AblationRow run_condition(int id, PipelineTopology topo, TrainConfig cfg, const std::vector<TrainingSample>& train,
                                 const std::vector<TrainingSample>& test, const fs::path& out_dir,
                                 const Trainer::Callback& on_epoch = {}) {
  const AblationCondition c = ablation_condition(id);
  apply_condition(c, topo, cfg);
  Pipeline<float> net(topo, cfg.seed);
  Trainer trainer(net, cfg);
  trainer.train(train, out_dir, on_epoch);
  const Evaluation ev = evaluate(net, test);
  return {id, c.label, ev.final_rgb.mean.psnr, ev.final_rgb.mean.ssim};
}

}  // namespace nirvis
