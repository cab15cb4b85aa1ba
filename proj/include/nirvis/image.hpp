#pragma once

// Raster container and the colour/geometry helpers shared by the simulator,
// the networks and the metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nirvis/error.hpp"

namespace nirvis {

enum class ColorSpace { RGB, YUV, GRAY, HSV };

inline std::string_view to_string(ColorSpace cs) {
  switch (cs) {
    case ColorSpace::RGB: return "RGB";
    case ColorSpace::YUV: return "YUV";
    case ColorSpace::GRAY: return "GRAY";
    case ColorSpace::HSV: return "HSV";
  }
  return "?";
}

inline ColorSpace color_space_from_string(std::string_view s) {
  if (s == "RGB") return ColorSpace::RGB;
  if (s == "YUV") return ColorSpace::YUV;
  if (s == "GRAY") return ColorSpace::GRAY;
  if (s == "HSV") return ColorSpace::HSV;
  throw ValidationError("unknown colour space '" + std::string(s) + "'");
}

/// H x W x C float image stored row-major, channels interleaved.
class Raster {
 public:
  Raster() = default;
  Raster(int height, int width, int channels, ColorSpace space, float fill = 0.0f)
      : height_(height), width_(width), channels_(channels), space_(space) {
    detail::require(height > 0 && width > 0, "raster dimensions must be positive");
    detail::require(channels >= 1, "raster needs at least one channel");
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  ColorSpace space() const { return space_; }
  void set_space(ColorSpace s) { space_ = s; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  float at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  bool same_shape(const Raster& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

  /// Mean of one channel.
  double channel_mean(int c) const {
    double s = 0.0;
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) s += at(y, x, c);
    return s / (static_cast<double>(height_) * width_);
  }

  double mean() const {
    double s = 0.0;
    for (float v : data_) s += v;
    return data_.empty() ? 0.0 : s / static_cast<double>(data_.size());
  }

  /// Throws unless every value is finite and inside the colour-space range.
  void validate() const {
    detail::require(channels_ == 1 || channels_ == 2 || channels_ == 3,
                    "raster channel count must be 1, 2 or 3");
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const float v = data_[i];
      detail::require(std::isfinite(v), "raster contains non-finite value");
      const int c = static_cast<int>(i % channels_);
      float lo = 0.0f, hi = 1.0f;
      if (space_ == ColorSpace::YUV && c > 0) lo = -0.5f, hi = 0.5f;
      detail::require(v >= lo - 1e-6f && v <= hi + 1e-6f, "raster value outside declared range");
    }
  }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  ColorSpace space_ = ColorSpace::RGB;
  std::vector<float> data_;
};

// ---------------------------------------------------------------------------
// Bayer CFA (RGGB)

/// Channel sampled at (y, x) for the RGGB tile.
inline int rggb_channel(int y, int x) {
  if ((y & 1) == 0) return (x & 1) == 0 ? 0 : 1;
  return (x & 1) == 0 ? 1 : 2;
}

inline Raster mosaic(const Raster& rgb) {
  detail::require(rgb.channels() == 3 && rgb.space() == ColorSpace::RGB, "mosaic expects an RGB raster");
  detail::require(rgb.height() % 2 == 0 && rgb.width() % 2 == 0, "mosaic expects even dimensions");
  Raster out(rgb.height(), rgb.width(), 1, ColorSpace::GRAY);
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x) out.at(y, x, 0) = rgb.at(y, x, rggb_channel(y, x));
  return out;
}

/// Bilinear demosaic. Each missing sample is the mean of the nearest
/// same-colour neighbours; borders reflect, so constants reproduce exactly.
inline Raster demosaic(const Raster& cfa) {
  detail::require(cfa.channels() == 1, "demosaic expects a single-channel CFA raster");
  detail::require(cfa.height() % 2 == 0 && cfa.width() % 2 == 0, "demosaic expects even dimensions");
  const int h = cfa.height(), w = cfa.width();
  auto reflect = [](int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  auto px = [&](int y, int x) { return cfa.at(reflect(y, h), reflect(x, w), 0); };

  Raster out(h, w, 3, ColorSpace::RGB);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int here = rggb_channel(y, x);
      const float cross = 0.25f * (px(y - 1, x) + px(y + 1, x) + px(y, x - 1) + px(y, x + 1));
      const float diag = 0.25f * (px(y - 1, x - 1) + px(y - 1, x + 1) + px(y + 1, x - 1) + px(y + 1, x + 1));
      const float horiz = 0.5f * (px(y, x - 1) + px(y, x + 1));
      const float vert = 0.5f * (px(y - 1, x) + px(y + 1, x));
      const float v = px(y, x);
      std::array<float, 3> rgb{};
      if (here == 0) {
        rgb = {v, cross, diag};
      } else if (here == 2) {
        rgb = {diag, cross, v};
      } else if ((y & 1) == 0) {  // green on a red row
        rgb = {horiz, v, vert};
      } else {  // green on a blue row
        rgb = {vert, v, horiz};
      }
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = rgb[c];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Colour spaces. BT.601 full range.

inline constexpr std::array<std::array<double, 3>, 3> kRgbToYuv{{
    {0.299, 0.587, 0.114},
    {-0.299 / 1.772, -0.587 / 1.772, 0.5},
    {0.5, -0.587 / 1.402, -0.114 / 1.402},
}};

inline constexpr std::array<std::array<double, 3>, 3> kYuvToRgb{{
    {1.0, 0.0, 1.402},
    {1.0, -0.114 * 1.772 / 0.587, -0.299 * 1.402 / 0.587},
    {1.0, 1.772, 0.0},
}};

namespace detail {

inline Raster apply_matrix(const Raster& in, const std::array<std::array<double, 3>, 3>& m, ColorSpace to) {
  Raster out(in.height(), in.width(), 3, to);
  auto src = in.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); i += 3) {
    for (int r = 0; r < 3; ++r) {
      const double v = m[r][0] * src[i] + m[r][1] * src[i + 1] + m[r][2] * src[i + 2];
      dst[i + r] = static_cast<float>(v);
    }
  }
  return out;
}

}  // namespace detail

inline Raster rgb_to_yuv(const Raster& rgb) {
  detail::require(rgb.space() == ColorSpace::RGB && rgb.channels() == 3, "rgb_to_yuv expects RGB input");
  return detail::apply_matrix(rgb, kRgbToYuv, ColorSpace::YUV);
}

inline Raster yuv_to_rgb(const Raster& yuv) {
  detail::require(yuv.space() == ColorSpace::YUV && yuv.channels() == 3, "yuv_to_rgb expects YUV input");
  return detail::apply_matrix(yuv, kYuvToRgb, ColorSpace::RGB);
}

/// Hexcone HSV; all three components in [0,1].
inline Raster rgb_to_hsv(const Raster& rgb) {
  detail::require(rgb.space() == ColorSpace::RGB && rgb.channels() == 3, "rgb_to_hsv expects RGB input");
  Raster out(rgb.height(), rgb.width(), 3, ColorSpace::HSV);
  auto src = rgb.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); i += 3) {
    const double r = src[i], g = src[i + 1], b = src[i + 2];
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double d = mx - mn;
    double h = 0.0;
    if (d > 0.0) {
      if (mx == r) h = std::fmod((g - b) / d + 6.0, 6.0);
      else if (mx == g) h = (b - r) / d + 2.0;
      else h = (r - g) / d + 4.0;
      h /= 6.0;
    }
    dst[i] = static_cast<float>(h);
    dst[i + 1] = static_cast<float>(mx > 0.0 ? d / mx : 0.0);
    dst[i + 2] = static_cast<float>(mx);
  }
  return out;
}

inline Raster hsv_to_rgb(const Raster& hsv) {
  detail::require(hsv.space() == ColorSpace::HSV && hsv.channels() == 3, "hsv_to_rgb expects HSV input");
  Raster out(hsv.height(), hsv.width(), 3, ColorSpace::RGB);
  auto src = hsv.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); i += 3) {
    const double h = src[i] * 6.0, s = src[i + 1], v = src[i + 2];
    constexpr std::array<double, 3> offsets{5.0, 3.0, 1.0};
    for (int c = 0; c < 3; ++c) {
      const double k = std::fmod(offsets[c] + h, 6.0);
      const double f = std::clamp(std::min(k, 4.0 - k), 0.0, 1.0);
      dst[i + c] = static_cast<float>(v - v * s * f);
    }
  }
  return out;
}

/// Luminance plane (Y of BT.601) as a GRAY raster.
inline Raster luminance(const Raster& rgb) {
  detail::require(rgb.space() == ColorSpace::RGB && rgb.channels() == 3, "luminance expects RGB input");
  Raster out(rgb.height(), rgb.width(), 1, ColorSpace::GRAY);
  auto src = rgb.data();
  auto dst = out.data();
  for (std::size_t i = 0, j = 0; i < src.size(); i += 3, ++j)
    dst[j] = static_cast<float>(kRgbToYuv[0][0] * src[i] + kRgbToYuv[0][1] * src[i + 1] + kRgbToYuv[0][2] * src[i + 2]);
  return out;
}

/// Gray-world white balance: gain_c = mean luminance / mean_c.
inline Raster gray_world_white_balance(const Raster& in) {
  if (in.channels() == 1) return in;
  detail::require(in.space() == ColorSpace::RGB && in.channels() == 3, "white balance expects RGB input");
  std::array<double, 3> means{};
  for (int c = 0; c < 3; ++c) {
    means[c] = in.channel_mean(c);
    if (!(means[c] > 0.0)) throw ValidationError("white balance: channel " + std::to_string(c) + " has zero mean");
  }
  const double lum = kRgbToYuv[0][0] * means[0] + kRgbToYuv[0][1] * means[1] + kRgbToYuv[0][2] * means[2];
  Raster out = in;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int c = static_cast<int>(i % 3);
    d[i] = static_cast<float>(std::clamp(d[i] * (lum / means[c]), 0.0, 1.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resizing

inline Raster resize_half(const Raster& in) {
  detail::require(in.height() % 2 == 0 && in.width() % 2 == 0, "resize_half expects even dimensions");
  Raster out(in.height() / 2, in.width() / 2, in.channels(), in.space());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < in.channels(); ++c)
        out.at(y, x, c) = 0.25f * (in.at(2 * y, 2 * x, c) + in.at(2 * y, 2 * x + 1, c) +
                                   in.at(2 * y + 1, 2 * x, c) + in.at(2 * y + 1, 2 * x + 1, c));
  return out;
}

inline Raster resize_double(const Raster& in) {
  Raster out(in.height() * 2, in.width() * 2, in.channels(), in.space());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < in.channels(); ++c) out.at(y, x, c) = in.at(y / 2, x / 2, c);
  return out;
}

// ---------------------------------------------------------------------------
// Small helpers

/// Copies the listed channels into a new raster.
inline Raster select_channels(const Raster& in, int first, int count, ColorSpace space) {
  detail::require(first >= 0 && first + count <= in.channels(), "channel range out of bounds");
  Raster out(in.height(), in.width(), count, space);
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x)
      for (int c = 0; c < count; ++c) out.at(y, x, c) = in.at(y, x, first + c);
  return out;
}

inline Raster clamp01(Raster r) {
  for (float& v : r.data()) v = std::clamp(v, 0.0f, 1.0f);
  return r;
}

}  // namespace nirvis
