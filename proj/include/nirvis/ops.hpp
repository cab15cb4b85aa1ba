#pragma once

// Differentiable operators on NHWC tensors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include <Eigen/Core>

#include "nirvis/tensor.hpp"

namespace nirvis::ops {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kInstanceNormEps = 1e-5;

namespace detail {

/// Gradient buffer of parent i, or nullptr if it does not need one.
template <class T>
T* parent_grad(Node<T>& node, std::size_t i) {
  auto& p = node.parents[i];
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

enum class Broadcast { Same, Scalar, Channel };

inline Broadcast broadcast_kind(const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::Same;
  if (b.size() == 1) return Broadcast::Scalar;
  if (b.c == 1 && a.n == b.n && a.h == b.h && a.w == b.w) return Broadcast::Channel;
  throw ValidationError("incompatible shapes " + a.str() + " and " + b.str());
}

inline std::size_t bidx(Broadcast k, std::size_t i, int channels) {
  switch (k) {
    case Broadcast::Same: return i;
    case Broadcast::Scalar: return 0;
    case Broadcast::Channel: return i / static_cast<std::size_t>(channels);
  }
  return i;
}

/// Elementwise unary op from value function f(x) and derivative df(x, y).
template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  std::vector<T> out(x.size());
  const auto& xv = x.storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [df](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * df(xv[i], self.value[i]);
  });
}

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic. The second operand may be a scalar or have a single channel.

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto k = detail::broadcast_kind(a.shape(), b.shape());
  const int ch = a.shape().c;
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.storage()[i] + b.storage()[detail::bidx(k, i, ch)];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [k, ch](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (T* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[detail::bidx(k, i, ch)] += self.grad[i];
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const auto k = detail::broadcast_kind(a.shape(), b.shape());
  const int ch = a.shape().c;
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.storage()[i] - b.storage()[detail::bidx(k, i, ch)];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [k, ch](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (T* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[detail::bidx(k, i, ch)] -= self.grad[i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto k = detail::broadcast_kind(a.shape(), b.shape());
  const int ch = a.shape().c;
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.storage()[i] * b.storage()[detail::bidx(k, i, ch)];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [k, ch](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * bv[detail::bidx(k, i, ch)];
    if (T* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[detail::bidx(k, i, ch)] += self.grad[i] * av[i];
  });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  const auto k = detail::broadcast_kind(a.shape(), b.shape());
  const int ch = a.shape().c;
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.storage()[i] / b.storage()[detail::bidx(k, i, ch)];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [k, ch](Node<T>& self) {
    const auto& bv = self.parents[1]->value;
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] / bv[detail::bidx(k, i, ch)];
    if (T* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T d = bv[detail::bidx(k, i, ch)];
        gb[detail::bidx(k, i, ch)] -= self.grad[i] * self.value[i] / d;
      }
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

/// s - x
template <class T>
Tensor<T> rsub_scalar(T s, const Tensor<T>& x) {
  return detail::unary(x, [s](T v) { return s - v; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::abs(v); },
                       [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

/// log(x / (1 - x)); x must lie in (0, 1).
template <class T>
Tensor<T> logit(const Tensor<T>& x) {
  for (T v : x.storage())
    if (v <= T(0) || v >= T(1)) throw ValidationError("logit: input outside (0, 1)");
  return detail::unary(x, [](T v) { return std::log(v / (T(1) - v)); }, [](T v, T) { return T(1) / (v * (T(1) - v)); });
}

// ---------------------------------------------------------------------------
// Activations

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(kLeakySlope)) {
  return detail::unary(x, [slope](T v) { return v > T(0) ? v : slope * v; },
                       [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

/// Clamp with zero gradient outside [lo, hi].
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary(x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
                       [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.storage()) s += v;
  return make_result<T>(Shape{}, {s}, {x}, [](Node<T>& self) {
    if (T* gx = detail::parent_grad(self, 0)) {
      const T g = self.grad[0];
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    }
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.size());
  T s = T(0);
  for (T v : x.storage()) s += v;
  return make_result<T>(Shape{}, {s * inv}, {x}, [inv](Node<T>& self) {
    if (T* gx = detail::parent_grad(self, 0)) {
      const T g = self.grad[0] * inv;
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    }
  });
}

/// Mean over channels: (N,H,W,C) -> (N,H,W,1).
template <class T>
Tensor<T> mean_channels(const Tensor<T>& x) {
  const Shape s = x.shape();
  const int c = s.c;
  Shape o = s;
  o.c = 1;
  std::vector<T> out(o.size());
  for (std::size_t p = 0; p < out.size(); ++p) {
    T acc = T(0);
    for (int k = 0; k < c; ++k) acc += x.storage()[p * c + k];
    out[p] = acc / static_cast<T>(c);
  }
  return make_result<T>(o, std::move(out), {x}, [c](Node<T>& self) {
    if (T* gx = detail::parent_grad(self, 0))
      for (std::size_t p = 0; p < self.grad.size(); ++p)
        for (int k = 0; k < c; ++k) gx[p * c + k] += self.grad[p] / static_cast<T>(c);
  });
}

/// Per-image, per-channel mean over H and W, broadcast back to the input shape.
template <class T>
Tensor<T> spatial_mean(const Tensor<T>& x) {
  const Shape s = x.shape();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w, c = static_cast<std::size_t>(s.c);
  const T inv = T(1) / static_cast<T>(plane);
  std::vector<T> out(x.size());
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = n * plane * c;
    std::vector<T> acc(c, T(0));
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t k = 0; k < c; ++k) acc[k] += x.storage()[base + p * c + k];
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t k = 0; k < c; ++k) out[base + p * c + k] = acc[k] * inv;
  }
  return make_result<T>(s, std::move(out), {x}, [s, plane, c, inv](Node<T>& self) {
    T* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = n * plane * c;
      std::vector<T> acc(c, T(0));
      for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t k = 0; k < c; ++k) acc[k] += self.grad[base + p * c + k];
      for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t k = 0; k < c; ++k) gx[base + p * c + k] += acc[k] * inv;
    }
  });
}

/// Max over channels; the gradient goes to the first arg-max.
template <class T>
Tensor<T> max_channels(const Tensor<T>& x) {
  const Shape s = x.shape();
  const int c = s.c;
  Shape o = s;
  o.c = 1;
  std::vector<T> out(o.size());
  std::vector<int> arg(o.size());
  for (std::size_t p = 0; p < out.size(); ++p) {
    int best = 0;
    for (int k = 1; k < c; ++k)
      if (x.storage()[p * c + k] > x.storage()[p * c + best]) best = k;
    arg[p] = best;
    out[p] = x.storage()[p * c + best];
  }
  return make_result<T>(o, std::move(out), {x}, [c, arg = std::move(arg)](Node<T>& self) {
    if (T* gx = detail::parent_grad(self, 0))
      for (std::size_t p = 0; p < self.grad.size(); ++p) gx[p * c + arg[p]] += self.grad[p];
  });
}

// ---------------------------------------------------------------------------
// Channel plumbing

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ValidationError("concat_channels: shapes " + sa.str() + " and " + sb.str() + " differ spatially");
  Shape o = sa;
  o.c = sa.c + sb.c;
  const std::size_t pixels = static_cast<std::size_t>(sa.n) * sa.h * sa.w;
  std::vector<T> out(o.size());
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(a.storage().data() + p * sa.c, sa.c, out.data() + p * o.c);
    std::copy_n(b.storage().data() + p * sb.c, sb.c, out.data() + p * o.c + sa.c);
  }
  const int ca = sa.c, cb = sb.c, co = o.c;
  return make_result<T>(o, std::move(out), {a, b}, [pixels, ca, cb, co](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t p = 0; p < pixels; ++p)
        for (int k = 0; k < ca; ++k) ga[p * ca + k] += self.grad[p * co + k];
    if (T* gb = detail::parent_grad(self, 1))
      for (std::size_t p = 0; p < pixels; ++p)
        for (int k = 0; k < cb; ++k) gb[p * cb + k] += self.grad[p * co + ca + k];
  });
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, int first, int count) {
  const Shape s = x.shape();
  if (first < 0 || count <= 0 || first + count > s.c)
    throw ValidationError("slice_channels: range out of bounds for " + s.str());
  Shape o = s;
  o.c = count;
  const std::size_t pixels = static_cast<std::size_t>(s.n) * s.h * s.w;
  std::vector<T> out(o.size());
  for (std::size_t p = 0; p < pixels; ++p)
    std::copy_n(x.storage().data() + p * s.c + first, count, out.data() + p * count);
  const int c = s.c;
  return make_result<T>(o, std::move(out), {x}, [pixels, first, count, c](Node<T>& self) {
    if (T* gx = detail::parent_grad(self, 0))
      for (std::size_t p = 0; p < pixels; ++p)
        for (int k = 0; k < count; ++k) gx[p * c + first + k] += self.grad[p * count + k];
  });
}

/// y_o = sum_i m[o][i] * x_i + offset[o] on 3-channel tensors (colour matrices).
template <class T>
Tensor<T> channel_matrix(const Tensor<T>& x, const std::array<std::array<double, 3>, 3>& m,
                         std::array<double, 3> offset = {0.0, 0.0, 0.0}) {
  if (x.shape().c != 3) throw ValidationError("channel_matrix expects 3 channels, got " + x.shape().str());
  std::vector<T> out(x.size());
  const auto& xv = x.storage();
  for (std::size_t p = 0; p < xv.size(); p += 3)
    for (int r = 0; r < 3; ++r)
      out[p + r] = static_cast<T>(m[r][0] * xv[p] + m[r][1] * xv[p + 1] + m[r][2] * xv[p + 2] + offset[r]);
  return make_result<T>(x.shape(), std::move(out), {x}, [m](Node<T>& self) {
    if (T* gx = detail::parent_grad(self, 0))
      for (std::size_t p = 0; p < self.grad.size(); p += 3)
        for (int r = 0; r < 3; ++r)
          for (int i = 0; i < 3; ++i) gx[p + i] += static_cast<T>(m[r][i]) * self.grad[p + r];
  });
}

/// Hexcone HSV -> RGB with H, S, V in [0,1].
template <class T>
Tensor<T> hsv_to_rgb(const Tensor<T>& x) {
  if (x.shape().c != 3) throw ValidationError("hsv_to_rgb expects 3 channels, got " + x.shape().str());
  static constexpr std::array<double, 3> offsets{5.0, 3.0, 1.0};
  auto f_and_slope = [](double k) -> std::pair<double, double> {
    // f(k) = clamp(min(k, 4 - k), 0, 1)
    if (k < 1.0) return {k, 1.0};
    if (k < 3.0) return {1.0, 0.0};
    if (k < 4.0) return {4.0 - k, -1.0};
    return {0.0, 0.0};
  };
  std::vector<T> out(x.size());
  const auto& xv = x.storage();
  for (std::size_t p = 0; p < xv.size(); p += 3) {
    const double h = xv[p], s = xv[p + 1], v = xv[p + 2];
    for (int c = 0; c < 3; ++c) {
      double k = std::fmod(offsets[c] + 6.0 * h, 6.0);
      if (k < 0.0) k += 6.0;
      out[p + c] = static_cast<T>(v - v * s * f_and_slope(k).first);
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [f_and_slope](Node<T>& self) {
    T* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = self.parents[0]->value;
    for (std::size_t p = 0; p < xv.size(); p += 3) {
      const double h = xv[p], s = xv[p + 1], v = xv[p + 2];
      for (int c = 0; c < 3; ++c) {
        double k = std::fmod(offsets[c] + 6.0 * h, 6.0);
        if (k < 0.0) k += 6.0;
        const auto [f, df] = f_and_slope(k);
        const double g = self.grad[p + c];
        gx[p] += static_cast<T>(g * (-v * s * df * 6.0));
        gx[p + 1] += static_cast<T>(g * (-v * f));
        gx[p + 2] += static_cast<T>(g * (1.0 - s * f));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Spatial ops

/// Nearest-neighbour 2x upsampling.
template <class T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  const Shape s = x.shape();
  const Shape o{s.n, s.h * 2, s.w * 2, s.c};
  std::vector<T> out(o.size());
  const auto& xv = x.storage();
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < o.h; ++y)
      for (int xx = 0; xx < o.w; ++xx) {
        const T* src = xv.data() + ((static_cast<std::size_t>(n) * s.h + y / 2) * s.w + xx / 2) * s.c;
        T* dst = out.data() + ((static_cast<std::size_t>(n) * o.h + y) * o.w + xx) * o.c;
        std::copy_n(src, s.c, dst);
      }
  return make_result<T>(o, std::move(out), {x}, [s, o](Node<T>& self) {
    T* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    for (int n = 0; n < s.n; ++n)
      for (int y = 0; y < o.h; ++y)
        for (int xx = 0; xx < o.w; ++xx) {
          T* dst = gx + ((static_cast<std::size_t>(n) * s.h + y / 2) * s.w + xx / 2) * s.c;
          const T* src = self.grad.data() + ((static_cast<std::size_t>(n) * o.h + y) * o.w + xx) * o.c;
          for (int c = 0; c < s.c; ++c) dst[c] += src[c];
        }
  });
}

/// 2x2 box average (even spatial dims).
template <class T>
Tensor<T> avg_pool2x(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.h % 2 || s.w % 2) throw ValidationError("avg_pool2x expects even spatial dims, got " + s.str());
  const Shape o{s.n, s.h / 2, s.w / 2, s.c};
  std::vector<T> out(o.size(), T(0));
  const auto& xv = x.storage();
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int xx = 0; xx < s.w; ++xx)
        for (int c = 0; c < s.c; ++c)
          out[((static_cast<std::size_t>(n) * o.h + y / 2) * o.w + xx / 2) * o.c + c] +=
              T(0.25) * xv[((static_cast<std::size_t>(n) * s.h + y) * s.w + xx) * s.c + c];
  return make_result<T>(o, std::move(out), {x}, [s, o](Node<T>& self) {
    T* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    for (int n = 0; n < s.n; ++n)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx)
          for (int c = 0; c < s.c; ++c)
            gx[((static_cast<std::size_t>(n) * s.h + y) * s.w + xx) * s.c + c] +=
                T(0.25) * self.grad[((static_cast<std::size_t>(n) * o.h + y / 2) * o.w + xx / 2) * o.c + c];
  });
}

namespace detail {

/// Sampling window of a stride-s correlation: output (oy, ox) reads input
/// rows oy*stride + off_y + [0, kh) and columns ox*stride + off_x + [0, kw).
struct Window {
  int kh = 3, kw = 3, stride = 1, off_y = -1, off_x = -1;
  static Window same(int k, int stride) { return {k, k, stride, -(k / 2), -(k / 2)}; }
  std::size_t cols(int cin) const { return static_cast<std::size_t>(kh) * kw * cin; }
};

/// Zero-padded im2col restricted to output pixels [r0, r1) in (n, oy, ox)
/// order. Rows are output pixels, columns are (ky, kx, cin).
template <class T>
void im2col(const T* x, const Shape& s, const Window& win, int ho, int wo, std::size_t r0, std::size_t r1, T* col) {
  const std::size_t kcols = win.cols(s.c);
  const std::size_t per_image = static_cast<std::size_t>(ho) * wo;
  for (std::size_t r = r0; r < r1; ++r) {
    const std::size_t n = r / per_image;
    const int oy = static_cast<int>((r % per_image) / wo), ox = static_cast<int>(r % wo);
    T* row = col + (r - r0) * kcols;
    for (int ky = 0; ky < win.kh; ++ky) {
      const int iy = oy * win.stride + ky + win.off_y;
      for (int kx = 0; kx < win.kw; ++kx) {
        const int ix = ox * win.stride + kx + win.off_x;
        T* dst = row + (static_cast<std::size_t>(ky) * win.kw + kx) * s.c;
        if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) {
          std::fill_n(dst, s.c, T(0));
        } else {
          std::copy_n(x + ((n * s.h + iy) * s.w + ix) * s.c, s.c, dst);
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const Shape& s, const Window& win, int ho, int wo, std::size_t r0, std::size_t r1, T* dx) {
  const std::size_t kcols = win.cols(s.c);
  const std::size_t per_image = static_cast<std::size_t>(ho) * wo;
  for (std::size_t r = r0; r < r1; ++r) {
    const std::size_t n = r / per_image;
    const int oy = static_cast<int>((r % per_image) / wo), ox = static_cast<int>(r % wo);
    const T* row = col + (r - r0) * kcols;
    for (int ky = 0; ky < win.kh; ++ky) {
      const int iy = oy * win.stride + ky + win.off_y;
      if (iy < 0 || iy >= s.h) continue;
      for (int kx = 0; kx < win.kw; ++kx) {
        const int ix = ox * win.stride + kx + win.off_x;
        if (ix < 0 || ix >= s.w) continue;
        const T* src = row + (static_cast<std::size_t>(ky) * win.kw + kx) * s.c;
        T* dst = dx + ((n * s.h + iy) * s.w + ix) * s.c;
        for (int c = 0; c < s.c; ++c) dst[c] += src[c];
      }
    }
  }
}

/// dst[c] += sum_r src[r][c] in a fixed order, independent of buffer alignment.
template <class T>
void accumulate_rows(const T* src, std::size_t rows, int cols, T* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = src + r * cols;
    for (int c = 0; c < cols; ++c) dst[c] += row[c];
  }
}

/// Output rows per im2col block, sized so one block stays cache resident.
inline std::size_t conv_block_rows(std::size_t kcols) {
  return std::max<std::size_t>(64, (std::size_t{1} << 17) / std::max<std::size_t>(kcols, 1));
}

}  // namespace detail

/// 2-D cross-correlation, zero "same" padding (k/2), stride 1 or 2.
/// Weights have shape (k, k, cin, cout) stored in the (n, h, w, c) slots;
/// bias has shape (1, 1, 1, cout). Output spatial size is ceil(in / stride).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1) {
  const Shape s = x.shape();
  const Shape ws = w.shape();
  const int k = ws.n;
  if (ws.h != k || k % 2 == 0) throw ValidationError("conv2d: kernel must be square and odd, got " + ws.str());
  if (ws.w != s.c)
    throw ValidationError("conv2d: input has " + std::to_string(s.c) + " channels, kernel expects " +
                          std::to_string(ws.w));
  if (b.size() != static_cast<std::size_t>(ws.c)) throw ValidationError("conv2d: bias size mismatch");
  if (stride != 1 && stride != 2) throw ValidationError("conv2d: stride must be 1 or 2");
  const int cout = ws.c;
  const int ho = (s.h + stride - 1) / stride;
  const int wo = (s.w + stride - 1) / stride;
  const Shape o{s.n, ho, wo, cout};
  const std::size_t rows = static_cast<std::size_t>(s.n) * ho * wo;
  const detail::Window win = detail::Window::same(k, stride);
  const std::size_t kcols = win.cols(s.c);
  const std::size_t block = detail::conv_block_rows(kcols);

  using Mat = detail::RowMatrix<T>;
  using MapC = Eigen::Map<const Mat>;
  using Map = Eigen::Map<Mat>;
  const auto ix = [](std::size_t v) { return static_cast<Eigen::Index>(v); };

  std::vector<T> col(std::min(rows, block) * kcols);
  std::vector<T> out(o.size());
  {
    const MapC wm(w.storage().data(), ix(kcols), cout);
    const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(b.storage().data(), cout);
    for (std::size_t r0 = 0; r0 < rows; r0 += block) {
      const std::size_t r1 = std::min(rows, r0 + block);
      detail::im2col(x.storage().data(), s, win, ho, wo, r0, r1, col.data());
      Map om(out.data() + r0 * cout, ix(r1 - r0), cout);
      om.noalias() = MapC(col.data(), ix(r1 - r0), ix(kcols)) * wm;
      om.rowwise() += bias;
    }
  }
  return make_result<T>(o, std::move(out), {x, w, b}, [s, win, ho, wo, rows, kcols, cout, block, ix](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    T* gw = detail::parent_grad(self, 1);
    T* gb = detail::parent_grad(self, 2);
    T* gx = detail::parent_grad(self, 0);
    if (gb) detail::accumulate_rows(self.grad.data(), rows, cout, gb);
    if (!gw && !gx) return;
    std::vector<T> col(std::min(rows, block) * kcols);
    const MapC wm(wv.data(), ix(kcols), cout);
    for (std::size_t r0 = 0; r0 < rows; r0 += block) {
      const std::size_t r1 = std::min(rows, r0 + block);
      const MapC dout(self.grad.data() + r0 * cout, ix(r1 - r0), cout);
      if (gw) {
        detail::im2col(xv.data(), s, win, ho, wo, r0, r1, col.data());
        Map(gw, ix(kcols), cout).noalias() += MapC(col.data(), ix(r1 - r0), ix(kcols)).transpose() * dout;
      }
      if (gx) {
        Map(col.data(), ix(r1 - r0), ix(kcols)).noalias() = dout * wm.transpose();
        detail::col2im(col.data(), s, win, ho, wo, r0, r1, gx);
      }
    }
  });
}

/// Nearest-neighbour 2x upsample followed by a stride-1 convolution.
/// For 3x3 kernels this runs as four 2x2 correlations on the low-resolution
/// input, one per output phase; the result equals the direct form.
template <class T>
Tensor<T> resize_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const Shape s = x.shape();
  const Shape ws = w.shape();
  if (ws.n != 3 || ws.h != 3) return conv2d(upsample2x(x), w, b, 1);
  if (ws.w != s.c)
    throw ValidationError("resize_conv: input has " + std::to_string(s.c) + " channels, kernel expects " +
                          std::to_string(ws.w));
  if (b.size() != static_cast<std::size_t>(ws.c)) throw ValidationError("resize_conv: bias size mismatch");
  const int cin = s.c, cout = ws.c;
  const Shape o{s.n, 2 * s.h, 2 * s.w, cout};
  const std::size_t rows = static_cast<std::size_t>(s.n) * s.h * s.w;
  const std::size_t tap = static_cast<std::size_t>(cin) * cout;
  const std::size_t kcols = 4 * static_cast<std::size_t>(cin);
  const std::size_t block = detail::conv_block_rows(kcols);

  using Mat = detail::RowMatrix<T>;
  using MapC = Eigen::Map<const Mat>;
  using Map = Eigen::Map<Mat>;
  const auto ix = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  // Output phase a in {0,1} folds kernel row ky into effective row (ky >= 1 + a).
  const auto fold = [](int a, int k) { return k >= 1 + a ? 1 : 0; };
  const auto window = [](int a, int bph) { return detail::Window{2, 2, 1, a - 1, bph - 1}; };
  // Low-res row r of phase (a, bph) lands at output pixel (n, 2i + a, 2j + bph).
  const auto out_row = [s, o](std::size_t r, int a, int bph) {
    const std::size_t per = static_cast<std::size_t>(s.h) * s.w;
    const std::size_t n = r / per;
    const std::size_t i = (r % per) / s.w, j = r % s.w;
    return (n * o.h + 2 * i + a) * o.w + 2 * j + bph;
  };

  std::vector<T> out(o.size());
  std::vector<T> col(std::min(rows, block) * kcols), res(std::min(rows, block) * cout), weff(4 * tap);
  const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(b.storage().data(), cout);
  for (int a = 0; a < 2; ++a)
    for (int bph = 0; bph < 2; ++bph) {
      std::fill(weff.begin(), weff.end(), T(0));
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const T* src = w.storage().data() + (static_cast<std::size_t>(ky) * 3 + kx) * tap;
          T* dst = weff.data() + (static_cast<std::size_t>(fold(a, ky)) * 2 + fold(bph, kx)) * tap;
          for (std::size_t i = 0; i < tap; ++i) dst[i] += src[i];
        }
      const MapC wm(weff.data(), ix(kcols), cout);
      for (std::size_t r0 = 0; r0 < rows; r0 += block) {
        const std::size_t r1 = std::min(rows, r0 + block);
        detail::im2col(x.storage().data(), s, window(a, bph), s.h, s.w, r0, r1, col.data());
        Map rm(res.data(), ix(r1 - r0), cout);
        rm.noalias() = MapC(col.data(), ix(r1 - r0), ix(kcols)) * wm;
        rm.rowwise() += bias;
        for (std::size_t r = r0; r < r1; ++r)
          std::copy_n(res.data() + (r - r0) * cout, cout, out.data() + out_row(r, a, bph) * cout);
      }
    }
  return make_result<T>(o, std::move(out), {x, w, b},
                        [s, cin, cout, rows, tap, kcols, block, ix, fold, window, out_row](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    T* gx = detail::parent_grad(self, 0);
    T* gw = detail::parent_grad(self, 1);
    T* gb = detail::parent_grad(self, 2);
    if (gb) detail::accumulate_rows(self.grad.data(), 4 * rows, cout, gb);
    if (!gw && !gx) return;
    const std::size_t cap = std::min(rows, block);
    std::vector<T> col(cap * kcols), dout(cap * cout), weff(4 * tap), dweff(4 * tap);
    for (int a = 0; a < 2; ++a)
      for (int bph = 0; bph < 2; ++bph) {
        if (gx) {
          std::fill(weff.begin(), weff.end(), T(0));
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const T* src = wv.data() + (static_cast<std::size_t>(ky) * 3 + kx) * tap;
              T* dst = weff.data() + (static_cast<std::size_t>(fold(a, ky)) * 2 + fold(bph, kx)) * tap;
              for (std::size_t i = 0; i < tap; ++i) dst[i] += src[i];
            }
        }
        std::fill(dweff.begin(), dweff.end(), T(0));
        const detail::Window win = window(a, bph);
        for (std::size_t r0 = 0; r0 < rows; r0 += block) {
          const std::size_t r1 = std::min(rows, r0 + block);
          for (std::size_t r = r0; r < r1; ++r)
            std::copy_n(self.grad.data() + out_row(r, a, bph) * cout, cout, dout.data() + (r - r0) * cout);
          const MapC dm(dout.data(), ix(r1 - r0), cout);
          if (gw) {
            detail::im2col(xv.data(), s, win, s.h, s.w, r0, r1, col.data());
            Map(dweff.data(), ix(kcols), cout).noalias() += MapC(col.data(), ix(r1 - r0), ix(kcols)).transpose() * dm;
          }
          if (gx) {
            Map(col.data(), ix(r1 - r0), ix(kcols)).noalias() = dm * MapC(weff.data(), ix(kcols), cout).transpose();
            detail::col2im(col.data(), s, win, s.h, s.w, r0, r1, gx);
          }
        }
        if (gw)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const T* src = dweff.data() + (static_cast<std::size_t>(fold(a, ky)) * 2 + fold(bph, kx)) * tap;
              T* dst = gw + (static_cast<std::size_t>(ky) * 3 + kx) * tap;
              for (std::size_t i = 0; i < tap; ++i) dst[i] += src[i];
            }
      }
    (void)cin;
  });
}

/// Per-(sample, channel) normalization over H*W, then per-channel affine.
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                        T eps = T(kInstanceNormEps)) {
  const Shape s = x.shape();
  const int hw = s.h * s.w;
  if (hw <= 1) throw ValidationError("instance_norm: needs more than one spatial element, got " + s.str());
  if (scale.size() != static_cast<std::size_t>(s.c) || shift.size() != static_cast<std::size_t>(s.c))
    throw ValidationError("instance_norm: scale/shift must have one entry per channel");
  const int c = s.c;
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(static_cast<std::size_t>(s.n) * c);
  std::vector<T> out(x.size());
  const auto& xv = x.storage();
  std::vector<T> mu(c), var(c);
  for (int n = 0; n < s.n; ++n) {
    const T* base = xv.data() + static_cast<std::size_t>(n) * hw * c;
    std::fill(mu.begin(), mu.end(), T(0));
    std::fill(var.begin(), var.end(), T(0));
    for (int p = 0; p < hw; ++p)
      for (int k = 0; k < c; ++k) mu[k] += base[static_cast<std::size_t>(p) * c + k];
    for (int k = 0; k < c; ++k) mu[k] /= static_cast<T>(hw);
    for (int p = 0; p < hw; ++p)
      for (int k = 0; k < c; ++k) {
        const T d = base[static_cast<std::size_t>(p) * c + k] - mu[k];
        var[k] += d * d;
      }
    for (int k = 0; k < c; ++k) inv_std[static_cast<std::size_t>(n) * c + k] = T(1) / std::sqrt(var[k] / static_cast<T>(hw) + eps);
    for (int p = 0; p < hw; ++p)
      for (int k = 0; k < c; ++k) {
        const std::size_t i = (static_cast<std::size_t>(n) * hw + p) * c + k;
        xhat[i] = (xv[i] - mu[k]) * inv_std[static_cast<std::size_t>(n) * c + k];
        out[i] = xhat[i] * scale.storage()[k] + shift.storage()[k];
      }
  }
  return make_result<T>(s, std::move(out), {x, scale, shift},
                        [s, hw, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
    const auto& g = self.grad;
    const auto& sc = self.parents[1]->value;
    T* gx = detail::parent_grad(self, 0);
    T* gs = detail::parent_grad(self, 1);
    T* gt = detail::parent_grad(self, 2);
    std::vector<T> sum_d(c), sum_dx(c);
    for (int n = 0; n < s.n; ++n) {
      std::fill(sum_d.begin(), sum_d.end(), T(0));
      std::fill(sum_dx.begin(), sum_dx.end(), T(0));
      for (int p = 0; p < hw; ++p)
        for (int k = 0; k < c; ++k) {
          const std::size_t i = (static_cast<std::size_t>(n) * hw + p) * c + k;
          sum_d[k] += g[i];
          sum_dx[k] += g[i] * xhat[i];
        }
      for (int k = 0; k < c; ++k) {
        if (gs) gs[k] += sum_dx[k];
        if (gt) gt[k] += sum_d[k];
      }
      if (!gx) continue;
      for (int p = 0; p < hw; ++p)
        for (int k = 0; k < c; ++k) {
          const std::size_t i = (static_cast<std::size_t>(n) * hw + p) * c + k;
          const T inv = inv_std[static_cast<std::size_t>(n) * c + k];
          // d xhat = g * scale; dx = inv/hw * (hw*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
          gx[i] += sc[k] * inv / static_cast<T>(hw) *
                   (static_cast<T>(hw) * g[i] - sum_d[k] - xhat[i] * sum_dx[k]);
        }
    }
  });
}

/// Valid-mode 1-D correlation along x (axis = 2) or y (axis = 1), per channel.
template <class T>
Tensor<T> correlate_valid(const Tensor<T>& x, const std::vector<T>& kernel, int axis) {
  const Shape s = x.shape();
  const int k = static_cast<int>(kernel.size());
  Shape o = s;
  if (axis == 2) o.w = s.w - k + 1;
  else o.h = s.h - k + 1;
  if (o.w <= 0 || o.h <= 0) throw ValidationError("correlate_valid: input " + s.str() + " smaller than kernel");
  const std::size_t step = axis == 2 ? static_cast<std::size_t>(s.c) : static_cast<std::size_t>(s.w) * s.c;
  std::vector<T> out(o.size());
  const auto& xv = x.storage();
  auto in_index = [s](int n, int y, int xx, int c) {
    return ((static_cast<std::size_t>(n) * s.h + y) * s.w + xx) * s.c + c;
  };
  std::size_t oi = 0;
  for (int n = 0; n < o.n; ++n)
    for (int y = 0; y < o.h; ++y)
      for (int xx = 0; xx < o.w; ++xx)
        for (int c = 0; c < o.c; ++c, ++oi) {
          const std::size_t base = in_index(n, y, xx, c);
          T acc = T(0);
          for (int j = 0; j < k; ++j) acc += kernel[j] * xv[base + j * step];
          out[oi] = acc;
        }
  return make_result<T>(o, std::move(out), {x}, [o, kernel, step, in_index](Node<T>& self) {
    T* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    const int k = static_cast<int>(kernel.size());
    std::size_t oi = 0;
    for (int n = 0; n < o.n; ++n)
      for (int y = 0; y < o.h; ++y)
        for (int xx = 0; xx < o.w; ++xx)
          for (int c = 0; c < o.c; ++c, ++oi) {
            const std::size_t base = in_index(n, y, xx, c);
            const T g = self.grad[oi];
            for (int j = 0; j < k; ++j) gx[base + j * step] += kernel[j] * g;
          }
  });
}

/// Separable valid-mode Gaussian blur.
template <class T>
Tensor<T> gaussian_blur_valid(const Tensor<T>& x, const std::vector<T>& kernel) {
  return correlate_valid(correlate_valid(x, kernel, 2), kernel, 1);
}

/// Normalized 1-D Gaussian taps.
template <class T>
std::vector<T> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = 0.5 * (size - 1);
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    k[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    total += k[i];
  }
  std::vector<T> out(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) out[i] = static_cast<T>(k[i] / total);
  return out;
}

/// Forward difference along x (axis 2) or y (axis 1); zero at the last
/// row/column (replicate boundary).
template <class T>
Tensor<T> forward_diff(const Tensor<T>& x, int axis) {
  const Shape s = x.shape();
  const std::size_t step = axis == 2 ? static_cast<std::size_t>(s.c) : static_cast<std::size_t>(s.w) * s.c;
  std::vector<T> out(x.size(), T(0));
  const auto& xv = x.storage();
  auto last = [s, axis](int y, int xx) { return axis == 2 ? xx == s.w - 1 : y == s.h - 1; };
  std::size_t i = 0;
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int xx = 0; xx < s.w; ++xx)
        for (int c = 0; c < s.c; ++c, ++i)
          if (!last(y, xx)) out[i] = xv[i + step] - xv[i];
  return make_result<T>(s, std::move(out), {x}, [s, step, last](Node<T>& self) {
    T* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    std::size_t i = 0;
    for (int n = 0; n < s.n; ++n)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx)
          for (int c = 0; c < s.c; ++c, ++i)
            if (!last(y, xx)) {
              gx[i + step] += self.grad[i];
              gx[i] -= self.grad[i];
            }
  });
}

}  // namespace nirvis::ops
