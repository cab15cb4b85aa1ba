#pragma once

// Parameter storage and the two backbone families: a U-Net with stride-2
// down-sampling, resize-convolution up-sampling and concatenating skips, and a
// residual stack with a global input-to-output skip.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nirvis/ops.hpp"
#include "nirvis/rng.hpp"
#include "nirvis/tensor.hpp"

namespace nirvis::nn {

template <class T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered list of learnable tensors. Order is creation order and defines
/// the on-disk layout.
template <class T>
class ParameterSet {
 public:
  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values) {
    for (const auto& p : params_)
      if (p.name == name) throw ValidationError("duplicate parameter name '" + name + "'");
    auto t = Tensor<T>::from_data(shape, std::move(values), true);
    params_.push_back({name, t});
    return t;
  }

  std::vector<NamedParameter<T>>& items() { return params_; }
  const std::vector<NamedParameter<T>>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p.tensor;
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  bool all_finite() const {
    for (const auto& p : params_)
      for (T v : p.tensor.storage())
        if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::vector<NamedParameter<T>> params_;
};

enum class Activation { LeakyRelu, Relu };

inline std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "leaky_relu"; }
inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "leaky_relu") return Activation::LeakyRelu;
  throw ValidationError("unknown activation '" + s + "'");
}

template <class T>
Tensor<T> activate(const Tensor<T>& x, Activation a) {
  return a == Activation::Relu ? ops::relu(x) : ops::leaky_relu(x);
}

/// 3x3 convolution with optional instance normalization.
template <class T>
struct ConvLayer {
  Tensor<T> weight;
  Tensor<T> bias;
  Tensor<T> norm_scale;  // undefined when not normalized
  Tensor<T> norm_shift;
  int stride = 1;
  bool upsample = false;

  ConvLayer() = default;
  ConvLayer(ParameterSet<T>& ps, const std::string& name, int cin, int cout, Rng& rng, int stride_ = 1,
            bool normalize = true, bool upsample_ = false)
      : stride(stride_), upsample(upsample_) {
    const double limit = std::sqrt(6.0 / (9.0 * cin));  // He-uniform
    std::vector<T> w(static_cast<std::size_t>(9) * cin * cout);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
    weight = ps.add(name + ".w", Shape{3, 3, cin, cout}, std::move(w));
    bias = ps.add(name + ".b", Shape{1, 1, 1, cout}, std::vector<T>(static_cast<std::size_t>(cout), T(0)));
    if (normalize) {
      norm_scale = ps.add(name + ".in_scale", Shape{1, 1, 1, cout}, std::vector<T>(static_cast<std::size_t>(cout), T(1)));
      norm_shift = ps.add(name + ".in_shift", Shape{1, 1, 1, cout}, std::vector<T>(static_cast<std::size_t>(cout), T(0)));
    }
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> y = upsample ? ops::resize_conv(x, weight, bias) : ops::conv2d(x, weight, bias, stride);
    if (norm_scale.defined()) y = ops::instance_norm(y, norm_scale, norm_shift);
    return y;
  }
};

struct UNetSpec {
  int depth = 3;
  int base_features = 16;
  Activation activation = Activation::LeakyRelu;

  int features(int level) const { return base_features << level; }
  void validate() const {
    detail::require(depth >= 1 && depth <= 8, "unet: depth must be in [1, 8]");
    detail::require(base_features >= 1, "unet: base_features must be positive");
  }
  friend bool operator==(const UNetSpec&, const UNetSpec&) = default;
};

inline void to_json(nlohmann::json& j, const UNetSpec& s) {
  j = {{"depth", s.depth}, {"base_features", s.base_features}, {"activation", to_string(s.activation)}};
}
inline void from_json(const nlohmann::json& j, UNetSpec& s) {
  s.depth = j.at("depth").get<int>();
  s.base_features = j.at("base_features").get<int>();
  s.activation = activation_from_string(j.value("activation", std::string("leaky_relu")));
  s.validate();
}

/// Encoder-decoder with `depth` stride-2 stages. With `coarse_levels` = 1 the
/// decoder stops one stage early and the output is at half resolution.
/// The output layer is linear; callers pick the bounding activation.
template <class T>
class UNet {
 public:
  UNet() = default;
  UNet(ParameterSet<T>& ps, const std::string& name, const UNetSpec& spec, int in_channels, int out_channels,
       Rng& rng, int coarse_levels = 0)
      : spec_(spec), coarse_levels_(coarse_levels) {
    spec.validate();
    detail::require(coarse_levels >= 0 && coarse_levels < spec.depth, "unet: coarse_levels out of range");
    input_ = ConvLayer<T>(ps, name + ".enc0", in_channels, spec.features(0), rng, 1, false);
    for (int d = 1; d <= spec.depth; ++d) {
      down_.emplace_back(ps, name + ".down" + std::to_string(d), spec.features(d - 1), spec.features(d), rng, 2);
      mid_.emplace_back(ps, name + ".mid" + std::to_string(d), spec.features(d), spec.features(d), rng, 1);
    }
    for (int d = spec.depth; d > coarse_levels; --d) {
      up_.emplace_back(ps, name + ".up" + std::to_string(d), spec.features(d), spec.features(d - 1), rng, 1, true, true);
      fuse_.emplace_back(ps, name + ".fuse" + std::to_string(d), 2 * spec.features(d - 1), spec.features(d - 1), rng, 1);
    }
    output_ = ConvLayer<T>(ps, name + ".out", spec.features(coarse_levels), out_channels, rng, 1, false);
  }

  const UNetSpec& spec() const { return spec_; }

  void check_input(const Shape& s) const {
    const int m = 1 << spec_.depth;
    if (s.h % m != 0 || s.w % m != 0)
      throw ValidationError("unet: spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                            " is not divisible by 2^depth = " + std::to_string(m));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    check_input(x.shape());
    const Activation act = spec_.activation;
    std::vector<Tensor<T>> skips;
    Tensor<T> h = activate(input_(x), act);
    skips.push_back(h);
    for (std::size_t i = 0; i < down_.size(); ++i) {
      h = activate(down_[i](h), act);
      h = activate(mid_[i](h), act);
      skips.push_back(h);
    }
    for (std::size_t i = 0; i < up_.size(); ++i) {
      const int level = spec_.depth - 1 - static_cast<int>(i);
      h = activate(up_[i](h), act);
      h = ops::concat_channels(h, skips[static_cast<std::size_t>(level)]);
      h = activate(fuse_[i](h), act);
    }
    return output_(h);
  }

 private:
  UNetSpec spec_;
  int coarse_levels_ = 0;
  ConvLayer<T> input_;
  std::vector<ConvLayer<T>> down_, mid_, up_, fuse_;
  ConvLayer<T> output_;
};

/// Residual stack: input conv, `blocks` x (conv-IN-act-conv-IN + skip),
/// linear output conv. Returns the residual to add to the caller's signal.
template <class T>
class ResidualNet {
 public:
  ResidualNet() = default;
  ResidualNet(ParameterSet<T>& ps, const std::string& name, int in_channels, int out_channels, int blocks,
              int features, Rng& rng) {
    detail::require(blocks >= 0 && features >= 1, "residual net: invalid size");
    input_ = ConvLayer<T>(ps, name + ".in", in_channels, features, rng, 1, false);
    for (int b = 0; b < blocks; ++b) {
      first_.emplace_back(ps, name + ".block" + std::to_string(b) + ".a", features, features, rng, 1);
      second_.emplace_back(ps, name + ".block" + std::to_string(b) + ".b", features, features, rng, 1);
    }
    output_ = ConvLayer<T>(ps, name + ".out", features, out_channels, rng, 1, false);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> h = ops::leaky_relu(input_(x));
    for (std::size_t b = 0; b < first_.size(); ++b) {
      Tensor<T> r = ops::leaky_relu(first_[b](h));
      r = second_[b](r);
      h = ops::add(h, r);
    }
    return output_(h);
  }

 private:
  ConvLayer<T> input_;
  std::vector<ConvLayer<T>> first_, second_;
  ConvLayer<T> output_;
};

}  // namespace nirvis::nn
