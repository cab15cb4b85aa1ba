#pragma once

// Evaluation metrics: PSNR, SSIM and Hasler-Suesstrunk colourfulness.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nirvis/image.hpp"

namespace nirvis::metrics {

/// Domain the metrics are computed in.
enum class Domain {
  Quantized8,  // values rounded to 8-bit codes first
  Float,
};

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

inline Raster to_domain(const Raster& r, Domain d) {
  if (d == Domain::Float) return r;
  Raster out = r;
  for (float& v : out.data()) v = static_cast<float>(std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0);
  return out;
}

/// 10 log10(peak^2 / MSE); +infinity for identical inputs.
inline double psnr(const Raster& a, const Raster& b, double peak = 1.0) {
  detail::require(a.same_shape(b), "psnr: shape mismatch");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.storage()[i]) - b.storage()[i];
    se += d * d;
  }
  if (se == 0.0) return kInfinity;
  const double mse = se / static_cast<double>(a.size());
  return 10.0 * std::log10(peak * peak / mse);
}

/// Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5), averaged over
/// channels. Dynamic range 1.
inline double ssim(const Raster& a, const Raster& b) {
  detail::require(a.same_shape(b), "ssim: shape mismatch");
  constexpr int win = 11;
  detail::require(a.height() >= win && a.width() >= win, "ssim: image smaller than the 11x11 window");
  std::array<double, win> g{};
  double gs = 0.0;
  for (int i = 0; i < win; ++i) {
    g[i] = std::exp(-0.5 * (i - 5) * (i - 5) / (1.5 * 1.5));
    gs += g[i];
  }
  for (double& v : g) v /= gs;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int oh = a.height() - win + 1, ow = a.width() - win + 1;
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int j = 0; j < win; ++j)
          for (int i = 0; i < win; ++i) {
            const double w = g[j] * g[i];
            const double va = a.at(y + j, x + i, c), vb = b.at(y + j, x + i, c);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      }
  return total / (static_cast<double>(a.channels()) * oh * ow);
}

/// sqrt(sd_rg^2 + sd_yb^2) + 0.3 sqrt(mu_rg^2 + mu_yb^2) on [0,255]-scaled RGB.
inline double colourfulness(const Raster& rgb) {
  detail::require(rgb.channels() == 3 && rgb.space() == ColorSpace::RGB, "colourfulness expects an RGB raster");
  const std::size_t n = rgb.size() / 3;
  double s_rg = 0, s_yb = 0, ss_rg = 0, ss_yb = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const double r = 255.0 * rgb.storage()[3 * p], g = 255.0 * rgb.storage()[3 * p + 1],
                 b = 255.0 * rgb.storage()[3 * p + 2];
    const double rg = r - g, yb = 0.5 * (r + g) - b;
    s_rg += rg;
    s_yb += yb;
    ss_rg += rg * rg;
    ss_yb += yb * yb;
  }
  const double mu_rg = s_rg / n, mu_yb = s_yb / n;
  const double var_rg = std::max(0.0, ss_rg / n - mu_rg * mu_rg);
  const double var_yb = std::max(0.0, ss_yb / n - mu_yb * mu_yb);
  return std::sqrt(var_rg + var_yb) + 0.3 * std::sqrt(mu_rg * mu_rg + mu_yb * mu_yb);
}

struct ImageScores {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
  double colourfulness = 0.0;
};

struct MetricReport {
  std::vector<ImageScores> per_image;
  ImageScores mean;
};

inline ImageScores score(const std::string& name, const Raster& pred, const Raster& gt, Domain d = Domain::Quantized8) {
  const Raster p = to_domain(pred, d), g = to_domain(gt, d);
  ImageScores s{name, psnr(p, g), ssim(p, g), 0.0};
  if (p.channels() == 3 && p.space() == ColorSpace::RGB) s.colourfulness = colourfulness(p);
  return s;
}

/// Arithmetic means of the per-image entries.
inline MetricReport aggregate(std::vector<ImageScores> items) {
  MetricReport r;
  r.per_image = std::move(items);
  r.mean.name = "mean";
  if (r.per_image.empty()) return r;
  for (const auto& s : r.per_image) {
    r.mean.psnr += s.psnr;
    r.mean.ssim += s.ssim;
    r.mean.colourfulness += s.colourfulness;
  }
  const double n = static_cast<double>(r.per_image.size());
  r.mean.psnr /= n;
  r.mean.ssim /= n;
  r.mean.colourfulness /= n;
  return r;
}

/// Infinite PSNR is written as the string "inf".
inline nlohmann::json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double number_from_json(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>() == "-inf" ? -kInfinity : kInfinity;
  return j.get<double>();
}

inline nlohmann::json to_json(const ImageScores& s) {
  return {{"name", s.name}, {"psnr", number_or_inf(s.psnr)}, {"ssim", s.ssim}, {"colourfulness", s.colourfulness}};
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& s : r.per_image) items.push_back(to_json(s));
  nlohmann::json mean = to_json(r.mean);
  mean.erase("name");
  return {{"per_image", items}, {"mean", mean}};
}

}  // namespace nirvis::metrics
