#pragma once

// The RAW-to-VIS pipeline: Separation-Net (mixed -> NIR), Proportion-Net
// (mixed -> deviation fraction of NIR), VIS recombination, Restoration-Net
// (luminance guided by NIR) and Colorization-Net (half-resolution chroma).
//
//   nir   = SeparationNet(mixed)
//   p     = ProportionNet(mixed)
//   vis   = clamp(mixed - (1 + p) * nir, 0, 1)
//   y     = RestorationNet(Y(vis), nir)
//   uv    = ColorizationNet(vis, nir)             (H/2 x W/2)
//   final = clamp(yuv_to_rgb(y, upsample(uv)), 0, 1)

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "nirvis/image.hpp"
#include "nirvis/nn.hpp"
#include "nirvis/ops.hpp"

namespace nirvis {

/// Architecture plus the ablation switches. Fully determines the parameter
/// layout together with the init seed.
struct PipelineTopology {
  nn::UNetSpec separation{3, 16, nn::Activation::LeakyRelu};
  nn::UNetSpec proportion{3, 16, nn::Activation::Relu};
  nn::UNetSpec colorization{3, 16, nn::Activation::LeakyRelu};
  int restoration_blocks = 4;
  int restoration_features = 32;

  bool use_separation = true;    // off: restoration/colorization see the mixed image
  bool use_restoration = true;   // off: luminance of the VIS estimate passes through
  bool direct_unet = false;      // single U-Net mixed -> RGB
  bool chroma_full_res = false;  // colorization output at full resolution
  ColorSpace color_space = ColorSpace::YUV;  // YUV, HSV or RGB (U-Net instead of restoration)

  /// Full-scale widths (64 first-layer features).
  static PipelineTopology full_scale() {
    PipelineTopology t;
    t.separation.base_features = t.proportion.base_features = t.colorization.base_features = 64;
    t.separation.depth = t.proportion.depth = t.colorization.depth = 4;
    return t;
  }

  /// Smallest spatial multiple accepted by the pipeline.
  int spatial_multiple() const {
    return 1 << std::max({separation.depth, proportion.depth, colorization.depth});
  }

  void validate() const {
    separation.validate();
    proportion.validate();
    colorization.validate();
    detail::require(restoration_blocks >= 0 && restoration_features >= 1, "topology: invalid restoration size");
    detail::require(color_space == ColorSpace::YUV || color_space == ColorSpace::HSV || color_space == ColorSpace::RGB,
                    "topology: color space must be YUV, HSV or RGB");
  }

  friend bool operator==(const PipelineTopology&, const PipelineTopology&) = default;
};

inline void to_json(nlohmann::json& j, const PipelineTopology& t) {
  j = {{"separation", t.separation},
       {"proportion", t.proportion},
       {"colorization", t.colorization},
       {"restoration_blocks", t.restoration_blocks},
       {"restoration_features", t.restoration_features},
       {"use_separation", t.use_separation},
       {"use_restoration", t.use_restoration},
       {"direct_unet", t.direct_unet},
       {"chroma_full_res", t.chroma_full_res},
       {"color_space", std::string(to_string(t.color_space))}};
}

inline void from_json(const nlohmann::json& j, PipelineTopology& t) {
  t.separation = j.at("separation").get<nn::UNetSpec>();
  t.proportion = j.at("proportion").get<nn::UNetSpec>();
  t.colorization = j.at("colorization").get<nn::UNetSpec>();
  t.restoration_blocks = j.at("restoration_blocks").get<int>();
  t.restoration_features = j.at("restoration_features").get<int>();
  t.use_separation = j.at("use_separation").get<bool>();
  t.use_restoration = j.at("use_restoration").get<bool>();
  t.direct_unet = j.at("direct_unet").get<bool>();
  t.chroma_full_res = j.at("chroma_full_res").get<bool>();
  t.color_space = color_space_from_string(j.at("color_space").get<std::string>());
  t.validate();
}

/// Every intermediate of one forward pass, all in [0,1] image units except
/// chroma (U,V in [-0.5,0.5] for YUV; H,S in [0,1] for HSV). Members that an
/// ablation removes stay undefined.
template <class T>
struct PipelineOutput {
  Tensor<T> final_rgb;
  Tensor<T> nir_est;
  Tensor<T> proportion;
  Tensor<T> vis_est;
  Tensor<T> luma_in;        // Y (or V) of the VIS estimate
  Tensor<T> luma_restored;  // restored Y (or V); Y of final_rgb in RGB/direct modes
  Tensor<T> chroma;         // UV (or HS), possibly half resolution
};

/// vis = clamp(mixed - (1 + p) * nir, 0, 1)
template <class T>
Tensor<T> estimate_vis(const Tensor<T>& mixed, const Tensor<T>& nir, const Tensor<T>& p) {
  if (!(mixed.shape() == nir.shape()) || !(mixed.shape() == p.shape()))
    throw ValidationError("estimate_vis: shape mismatch " + mixed.shape().str() + ", " + nir.shape().str() + ", " +
                          p.shape().str());
  return ops::clamp(ops::sub(mixed, ops::add(nir, ops::mul(p, nir))), T(0), T(1));
}

/// D / max(S_n, eps) clamped to [0, max_ratio]. The default bound matches the
/// sigmoid output of Proportion-Net; pass infinity for the exact ratio.
inline Raster proportion_target(const Raster& deviation, const Raster& nir, float eps = 1e-3f,
                                float max_ratio = 1.0f) {
  detail::require(deviation.same_shape(nir), "proportion_target: shape mismatch");
  Raster out(nir.height(), nir.width(), nir.channels(), ColorSpace::RGB);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.storage()[i] = std::clamp(deviation.storage()[i] / std::max(nir.storage()[i], eps), 0.0f, max_ratio);
  return out;
}

template <class T>
class Pipeline {
 public:
  Pipeline(PipelineTopology topo, std::uint64_t seed) : topo_(std::move(topo)) {
    topo_.validate();
    Rng rng(seed);
    if (topo_.direct_unet) {
      direct_ = nn::UNet<T>(params_, "direct", topo_.separation, 3, 3, rng);
      return;
    }
    if (topo_.use_separation) {
      separation_ = nn::UNet<T>(params_, "separation", topo_.separation, 3, 3, rng);
      proportion_ = nn::UNet<T>(params_, "proportion", topo_.proportion, 3, 3, rng);
    }
    if (topo_.color_space == ColorSpace::RGB) {
      direct_ = nn::UNet<T>(params_, "rgb_restoration", topo_.separation, 6, 3, rng);
      return;
    }
    if (topo_.use_restoration)
      restoration_ = nn::ResidualNet<T>(params_, "restoration", 2 * (1 + 3), 1, topo_.restoration_blocks,
                                        topo_.restoration_features, rng);
    const int coarse = (topo_.chroma_full_res || topo_.color_space == ColorSpace::HSV) ? 0 : 1;
    colorization_ = nn::UNet<T>(params_, "colorization", topo_.colorization, 6, 2, rng, coarse);
  }

  const PipelineTopology& topology() const { return topo_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

  void check_input(const Shape& s) const {
    if (s.c != 3) throw ValidationError("pipeline expects a 3-channel mixed image, got " + s.str());
    const int m = topo_.spatial_multiple();
    if (s.h % m != 0 || s.w % m != 0)
      throw ValidationError("pipeline: input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                            " must be divisible by " + std::to_string(m) + "; resize or crop the input");
  }

  /// `mixed` holds [0,1] values, shape (N,H,W,3).
  PipelineOutput<T> forward(const Tensor<T>& mixed) const {
    check_input(mixed.shape());
    using namespace ops;
    PipelineOutput<T> out;
    const Tensor<T> mixed_pm = to_signed(mixed);

    if (topo_.direct_unet) {
      out.final_rgb = from_signed_bounded(direct_(mixed_pm));
      out.luma_restored = luma(out.final_rgb);
      return out;
    }

    Tensor<T> vis_src = mixed, nir_src = mixed;
    if (topo_.use_separation) {
      out.nir_est = from_signed_bounded(separation_(mixed_pm));
      out.proportion = sigmoid(proportion_(mixed));
      out.vis_est = estimate_vis(mixed, out.nir_est, out.proportion);
      vis_src = out.vis_est;
      nir_src = out.nir_est;
    }
    const Tensor<T> vis_pm = to_signed(vis_src), nir_pm = to_signed(nir_src);

    if (topo_.color_space == ColorSpace::RGB) {
      out.final_rgb = from_signed_bounded(direct_(concat_channels(vis_pm, nir_pm)));
      out.luma_restored = luma(out.final_rgb);
      return out;
    }

    const bool hsv = topo_.color_space == ColorSpace::HSV;
    out.luma_in = hsv ? max_channels(vis_src) : luma(vis_src);
    if (topo_.use_restoration) {
      // Local planes plus their per-image means.
      const Tensor<T> local = concat_channels(to_signed(out.luma_in), nir_pm);
      const Tensor<T> residual = restoration_(concat_channels(local, spatial_mean(local)));
      // Residual in logit space: zero residual passes the input through, and
      // the output stays in (0,1) without a gradient-blocking clamp.
      const Tensor<T> base = logit(clamp(out.luma_in, T(kLumaFloor), T(1 - kLumaFloor)));
      out.luma_restored = sigmoid(add(base, residual));
    } else {
      out.luma_restored = out.luma_in;
    }

    const Tensor<T> chroma_raw = colorization_(concat_channels(vis_pm, nir_pm));
    if (hsv) {
      out.chroma = sigmoid(chroma_raw);
      const Tensor<T> h = slice_channels(out.chroma, 0, 1), s = slice_channels(out.chroma, 1, 1);
      out.final_rgb = clamp(hsv_to_rgb(concat_channels(concat_channels(h, s), out.luma_restored)), T(0), T(1));
      return out;
    }
    out.chroma = mul_scalar(tanh(chroma_raw), T(0.5));
    const Tensor<T> uv_full = topo_.chroma_full_res ? out.chroma : upsample2x(out.chroma);
    out.final_rgb = clamp(channel_matrix(concat_channels(out.luma_restored, uv_full), kYuvToRgb), T(0), T(1));
    return out;
  }

  static Tensor<T> luma(const Tensor<T>& rgb) {
    return ops::slice_channels(ops::channel_matrix(rgb, kRgbToYuv), 0, 1);
  }

 private:
  static Tensor<T> to_signed(const Tensor<T>& x) { return ops::add_scalar(ops::mul_scalar(x, T(2)), T(-1)); }
  /// (tanh(x) + 1) / 2, i.e. a [-1,1]-space output mapped to [0,1].
  static Tensor<T> from_signed_bounded(const Tensor<T>& x) {
    return ops::add_scalar(ops::mul_scalar(ops::tanh(x), T(0.5)), T(0.5));
  }

  static constexpr double kLumaFloor = 1e-2;

  PipelineTopology topo_;
  nn::ParameterSet<T> params_;
  nn::UNet<T> separation_, proportion_, colorization_, direct_;
  nn::ResidualNet<T> restoration_;
};

// ---------------------------------------------------------------------------
// Raster <-> tensor helpers

template <class T>
Tensor<T> tensor_from_rasters(const std::vector<const Raster*>& batch) {
  detail::require(!batch.empty(), "empty batch");
  const Raster& first = *batch.front();
  Shape s{static_cast<int>(batch.size()), first.height(), first.width(), first.channels()};
  std::vector<T> data;
  data.reserve(s.size());
  for (const Raster* r : batch) {
    detail::require(r->same_shape(first), "batch rasters differ in shape");
    for (float v : r->data()) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>::from_data(s, std::move(data));
}

template <class T>
Tensor<T> tensor_from_raster(const Raster& r) {
  return tensor_from_rasters<T>({&r});
}

template <class T>
Raster raster_from_tensor(const Tensor<T>& t, int index, ColorSpace space) {
  const Shape s = t.shape();
  detail::require(index >= 0 && index < s.n, "raster_from_tensor: batch index out of range");
  Raster r(s.h, s.w, s.c, space);
  const std::size_t per = static_cast<std::size_t>(s.h) * s.w * s.c;
  for (std::size_t i = 0; i < per; ++i) r.storage()[i] = static_cast<float>(t.storage()[index * per + i]);
  return r;
}

/// Raster form of every intermediate for one image.
struct PipelineResult {
  Raster final_rgb;
  std::optional<Raster> nir_est, proportion, vis_est, y_restored, chroma;
};

template <class T>
PipelineResult run_pipeline(const Pipeline<T>& net, const Raster& mixed) {
  detail::require(mixed.channels() == 3, "run_pipeline expects an RGB mixed image");
  NoGradGuard guard;
  const auto out = net.forward(tensor_from_raster<T>(mixed));
  PipelineResult r;
  r.final_rgb = raster_from_tensor(out.final_rgb, 0, ColorSpace::RGB);
  if (out.nir_est.defined()) r.nir_est = raster_from_tensor(out.nir_est, 0, ColorSpace::RGB);
  if (out.proportion.defined()) r.proportion = raster_from_tensor(out.proportion, 0, ColorSpace::RGB);
  if (out.vis_est.defined()) r.vis_est = raster_from_tensor(out.vis_est, 0, ColorSpace::RGB);
  if (out.luma_restored.defined()) r.y_restored = raster_from_tensor(out.luma_restored, 0, ColorSpace::GRAY);
  if (out.chroma.defined()) {
    const auto cs = net.topology().color_space == ColorSpace::HSV ? ColorSpace::HSV : ColorSpace::YUV;
    r.chroma = raster_from_tensor(out.chroma, 0, cs);
  }
  return r;
}

}  // namespace nirvis
