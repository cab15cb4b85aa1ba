#pragma once

// Training objectives: MAE, SSIM, structure-aware smoothness, a perceptual
// surrogate, and the weighted separation / restoration / total losses.

#include <cmath>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "nirvis/ops.hpp"
#include "nirvis/rng.hpp"
#include "nirvis/tensor.hpp"

namespace nirvis {

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double lambda_v = 100.0;
  double lambda_n = 100.0;
  double lambda_v2 = 100.0;
  double lambda_y = 100.0;
  double gamma1 = 0.1;
  double gamma2 = 5.0;
  double gamma3 = 1.0;
  double gamma4 = 100.0;
  double lambda_g = 10.0;

  void validate() const {
    for (double v : {alpha, beta, lambda_v, lambda_n, lambda_v2, lambda_y, gamma1, gamma2, gamma3, gamma4, lambda_g})
      detail::require(v >= 0.0 && std::isfinite(v), "loss weights must be finite and non-negative");
  }
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Which optional terms are active. MAE is always on.
struct LossTerms {
  bool ssim = true;
  bool smoothness = true;
  bool perceptual = true;
  friend bool operator==(const LossTerms&, const LossTerms&) = default;
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"alpha", w.alpha},       {"beta", w.beta},         {"lambda_v", w.lambda_v}, {"lambda_n", w.lambda_n},
       {"lambda_v2", w.lambda_v2}, {"lambda_y", w.lambda_y}, {"gamma1", w.gamma1},     {"gamma2", w.gamma2},
       {"gamma3", w.gamma3},     {"gamma4", w.gamma4},     {"lambda_g", w.lambda_g}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  LossWeights d;
  w.alpha = j.value("alpha", d.alpha);
  w.beta = j.value("beta", d.beta);
  w.lambda_v = j.value("lambda_v", d.lambda_v);
  w.lambda_n = j.value("lambda_n", d.lambda_n);
  w.lambda_v2 = j.value("lambda_v2", d.lambda_v2);
  w.lambda_y = j.value("lambda_y", d.lambda_y);
  w.gamma1 = j.value("gamma1", d.gamma1);
  w.gamma2 = j.value("gamma2", d.gamma2);
  w.gamma3 = j.value("gamma3", d.gamma3);
  w.gamma4 = j.value("gamma4", d.gamma4);
  w.lambda_g = j.value("lambda_g", d.lambda_g);
  w.validate();
}

namespace losses {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!(a.shape() == b.shape()))
    throw ValidationError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

template <class T>
Tensor<T> mae(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mae");
  return ops::mean(ops::abs(ops::sub(a, b)));
}

/// Mean local SSIM (11x11 Gaussian window, sigma 1.5, dynamic range 1) over
/// every valid window position of every channel.
template <class T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "ssim");
  if (a.shape().h < kSsimWindow || a.shape().w < kSsimWindow)
    throw ValidationError("ssim: image " + a.shape().str() + " smaller than the 11x11 window");
  using namespace ops;
  const auto k = gaussian_kernel<T>(kSsimWindow, kSsimSigma);
  const T c1 = T(kSsimK1 * kSsimK1);
  const T c2 = T(kSsimK2 * kSsimK2);
  auto mu_a = gaussian_blur_valid(a, k);
  auto mu_b = gaussian_blur_valid(b, k);
  auto mu_a2 = square(mu_a);
  auto mu_b2 = square(mu_b);
  auto mu_ab = mul(mu_a, mu_b);
  auto var_a = sub(gaussian_blur_valid(square(a), k), mu_a2);
  auto var_b = sub(gaussian_blur_valid(square(b), k), mu_b2);
  auto cov = sub(gaussian_blur_valid(mul(a, b), k), mu_ab);
  auto num = mul(add_scalar(mul_scalar(mu_ab, T(2)), c1), add_scalar(mul_scalar(cov, T(2)), c2));
  auto den = mul(add_scalar(add(mu_a2, mu_b2), c1), add_scalar(add(var_a, var_b), c2));
  return mean(div(num, den));
}

/// mean(|dx I| * exp(-lg |dx G|)) + mean(|dy I| * exp(-lg |dy G|)).
/// The guide may have the same channel count as the image or a single channel.
template <class T>
Tensor<T> smoothness(const Tensor<T>& image, const Tensor<T>& guide, double lambda_g) {
  const Shape si = image.shape(), sg = guide.shape();
  if (si.n != sg.n || si.h != sg.h || si.w != sg.w || (sg.c != si.c && sg.c != 1))
    throw ValidationError("smoothness: guide " + sg.str() + " incompatible with image " + si.str());
  using namespace ops;
  Tensor<T> total;
  for (int axis : {2, 1}) {
    auto grad_i = abs(forward_diff(image, axis));
    auto damp = exp(mul_scalar(abs(forward_diff(guide, axis)), T(-lambda_g)));
    auto term = mean(mul(grad_i, damp));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// Fixed random three-layer feature extractor (stride 2, 8/16/32 features,
/// leaky ReLU). Weights come from a constant seed, so every build sees the
/// same extractor.
template <class T>
class PerceptualExtractor {
 public:
  static constexpr std::uint64_t kSeed = 0x5EED0FEA7u;

  static const PerceptualExtractor& instance() {
    static const PerceptualExtractor extractor;
    return extractor;
  }

  std::vector<Tensor<T>> features(const Tensor<T>& rgb) const {
    if (rgb.shape().c != 3) throw ValidationError("perceptual: expects 3-channel input, got " + rgb.shape().str());
    std::vector<Tensor<T>> out;
    Tensor<T> h = rgb;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = ops::leaky_relu(ops::conv2d(h, weights_[l], biases_[l], 2));
      out.push_back(h);
    }
    return out;
  }

 private:
  PerceptualExtractor() {
    Rng rng(kSeed);
    const int widths[] = {3, 8, 16, 32};
    for (int l = 0; l < 3; ++l) {
      const int cin = widths[l], cout = widths[l + 1];
      const double limit = std::sqrt(6.0 / (9.0 * cin));
      std::vector<T> w(static_cast<std::size_t>(9) * cin * cout);
      for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
      weights_.push_back(Tensor<T>::from_data(Shape{3, 3, cin, cout}, std::move(w)));
      biases_.push_back(Tensor<T>::zeros(Shape{1, 1, 1, cout}));
    }
  }

  std::vector<Tensor<T>> weights_;
  std::vector<Tensor<T>> biases_;
};

/// Mean over layers of the MAE between extractor feature maps.
template <class T>
Tensor<T> perceptual(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "perceptual");
  const auto& fx = PerceptualExtractor<T>::instance();
  auto fa = fx.features(a);
  auto fb = fx.features(b);
  Tensor<T> total;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    auto term = mae(fa[l], fb[l]);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return ops::mul_scalar(total, T(1.0 / static_cast<double>(fa.size())));
}

namespace detail {

template <class T>
Tensor<T> weighted(const Tensor<T>& acc, const Tensor<T>& term, double w) {
  auto scaled = ops::mul_scalar(term, T(w));
  return acc.defined() ? ops::add(acc, scaled) : scaled;
}

template <class T>
Tensor<T> or_zero(const Tensor<T>& t) {
  return t.defined() ? t : Tensor<T>::scalar(T(0));
}

}  // namespace detail

/// lambda_v (mae_v + 1 - ssim_v) + lambda_n (mae_n + 1 - ssim_n) + gamma1 * smooth(nir_est | mixed).
/// All images in [0,1].
template <class T>
Tensor<T> separation(const Tensor<T>& nir_est, const Tensor<T>& vis_est, const Tensor<T>& nir_gt,
                     const Tensor<T>& vis_gt, const Tensor<T>& mixed, const LossWeights& w,
                     const LossTerms& terms = {}) {
  auto group = [&](const Tensor<T>& est, const Tensor<T>& gt) {
    auto g = mae(est, gt);
    if (terms.ssim) g = ops::add(g, ops::rsub_scalar(T(1), ssim(est, gt)));
    return g;
  };
  Tensor<T> total;
  total = detail::weighted(total, group(vis_est, vis_gt), w.lambda_v);
  total = detail::weighted(total, group(nir_est, nir_gt), w.lambda_n);
  if (terms.smoothness) total = detail::weighted(total, smoothness(nir_est, mixed, w.lambda_g), w.gamma1);
  return total;
}

/// lambda_v2 mae(rgb) + lambda_y mae(y) + lambda_v2 (1 - ssim(rgb)) + gamma2 smooth(y | nir)
/// + gamma3 smooth(rgb | nir) + gamma4 perceptual(rgb). The NIR guide is the
/// channel mean of nir_est.
template <class T>
Tensor<T> restoration(const Tensor<T>& final_rgb, const Tensor<T>& y_restored, const Tensor<T>& rgb_gt,
                      const Tensor<T>& y_gt, const Tensor<T>& nir_est, const LossWeights& w,
                      const LossTerms& terms = {}) {
  Tensor<T> total;
  total = detail::weighted(total, mae(final_rgb, rgb_gt), w.lambda_v2);
  total = detail::weighted(total, mae(y_restored, y_gt), w.lambda_y);
  if (terms.ssim) total = detail::weighted(total, ops::rsub_scalar(T(1), ssim(final_rgb, rgb_gt)), w.lambda_v2);
  if (terms.smoothness) {
    const auto guide = ops::mean_channels(nir_est);
    total = detail::weighted(total, smoothness(y_restored, guide, w.lambda_g), w.gamma2);
    total = detail::weighted(total, smoothness(final_rgb, guide, w.lambda_g), w.gamma3);
  }
  if (terms.perceptual) total = detail::weighted(total, perceptual(final_rgb, rgb_gt), w.gamma4);
  return total;
}

/// alpha * sep + beta * res. Either side may be undefined (module disabled).
template <class T>
Tensor<T> total(const Tensor<T>& sep, const Tensor<T>& res, const LossWeights& w) {
  Tensor<T> out;
  if (sep.defined()) out = detail::weighted(out, sep, w.alpha);
  if (res.defined()) out = detail::weighted(out, res, w.beta);
  return detail::or_zero(out);
}

}  // namespace losses
}  // namespace nirvis
