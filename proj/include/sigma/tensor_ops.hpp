#pragma once

// Dense primitives shared by every block: projections, depthwise convolution,
// normalisation, activations, pooling and resampling.

#include <cmath>
#include <limits>

#include "sigma/dense_array.hpp"

namespace sigma {

inline constexpr double kLayerNormEps = 1e-5;

enum class PoolMode { Avg, Max };

/// Affine map over the last axis: x[..., Din] * W[Din, Dout] (+ b[Dout]).
template <typename S>
DenseArray<S> linear(const DenseArray<S>& x, const DenseArray<S>& weight) {
  require_rank(weight.shape(), 2, "linear(weight)");
  if (x.rank() < 1 || x.dim(-1) != weight.dim(0)) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " vs weight " +
                         shape_string(weight.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = weight.dim(1);
  DenseArray<S> out(out_shape);
  out.matrix().noalias() = x.matrix() * weight.matrix();
  return out;
}

template <typename S>
DenseArray<S> linear(const DenseArray<S>& x, const DenseArray<S>& weight, const DenseArray<S>& bias) {
  require_rank(bias.shape(), 1, "linear(bias)");
  if (bias.size() != weight.dim(1)) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " vs weight " +
                         shape_string(weight.shape()));
  }
  DenseArray<S> out = linear(x, weight);
  out.matrix().rowwise() += bias.matrix().row(0);
  return out;
}

/// Per-channel 2-D convolution with zero "same" padding. kernel is [k, k, C], k odd.
template <typename S>
DenseArray<S> depthwise_conv2d(const DenseArray<S>& x, const DenseArray<S>& kernel) {
  require_rank(x.shape(), 3, "depthwise_conv2d(x)");
  require_rank(kernel.shape(), 3, "depthwise_conv2d(kernel)");
  const Index k = kernel.dim(0);
  if (kernel.dim(1) != k) throw ConfigError("depthwise_conv2d: kernel must be square");
  if (k % 2 == 0) throw ConfigError("depthwise_conv2d: kernel size must be odd, got " + std::to_string(k));
  const Index H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (kernel.dim(2) != C) {
    throw DimensionError("depthwise_conv2d: kernel channels " + std::to_string(kernel.dim(2)) +
                         " vs input channels " + std::to_string(C));
  }
  const Index r = k / 2;
  DenseArray<S> out({H, W, C});
  const S* in = x.data();
  const S* ker = kernel.data();
  S* o = out.data();
  for (Index i = 0; i < H; ++i) {
    for (Index j = 0; j < W; ++j) {
      S* dst = o + (i * W + j) * C;
      for (Index di = 0; di < k; ++di) {
        const Index si = i + di - r;
        if (si < 0 || si >= H) continue;
        for (Index dj = 0; dj < k; ++dj) {
          const Index sj = j + dj - r;
          if (sj < 0 || sj >= W) continue;
          const S* src = in + (si * W + sj) * C;
          const S* kw = ker + (di * k + dj) * C;
          for (Index c = 0; c < C; ++c) dst[c] += kw[c] * src[c];
        }
      }
    }
  }
  return out;
}

template <typename S>
DenseArray<S> depthwise_conv2d(const DenseArray<S>& x, const DenseArray<S>& kernel, const DenseArray<S>& bias) {
  DenseArray<S> out = depthwise_conv2d(x, kernel);
  if (bias.size() != out.dim(-1)) throw DimensionError("depthwise_conv2d: bias extent mismatch");
  out.matrix().rowwise() += bias.matrix().row(0);
  return out;
}

/// Normalise every position over the last axis, then apply gamma/beta.
template <typename S>
DenseArray<S> layer_norm(const DenseArray<S>& x, const DenseArray<S>& gamma, const DenseArray<S>& beta,
                         S eps = static_cast<S>(kLayerNormEps)) {
  if (!(eps > 0)) throw DomainError("layer_norm: eps must be positive");
  const Index C = x.dim(-1);
  if (gamma.size() != C || beta.size() != C) {
    throw DimensionError("layer_norm: affine extent " + std::to_string(gamma.size()) + " vs channels " +
                         std::to_string(C));
  }
  DenseArray<S> out(x.shape());
  auto in = x.matrix();
  auto o = out.matrix();
  const auto g = gamma.matrix().row(0).array();
  const auto b = beta.matrix().row(0).array();
  for (Index r = 0; r < in.rows(); ++r) {
    const auto row = in.row(r).array();
    const S mean = row.sum() / static_cast<S>(C);
    const S var = (row - mean).square().sum() / static_cast<S>(C);
    const S inv = S(1) / std::sqrt(var + eps);
    o.row(r).array() = (row - mean) * inv * g + b;
  }
  return out;
}

template <typename S>
S sigmoid(S v) {
  if (v >= 0) return S(1) / (S(1) + std::exp(-v));
  const S e = std::exp(v);
  return e / (S(1) + e);
}

template <typename S>
S softplus(S v) {
  // log(1 + e^v) without overflow for large v or precision loss for small v.
  if (v > S(20)) return v + std::log1p(std::exp(-v));
  return std::log1p(std::exp(v));
}

template <typename S>
S silu(S v) {
  return v * sigmoid(v);
}

template <typename S, typename F>
DenseArray<S> map_elementwise(const DenseArray<S>& x, F f) {
  DenseArray<S> out(x.shape());
  for (Index i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

template <typename S>
DenseArray<S> sigmoid(const DenseArray<S>& x) {
  return map_elementwise(x, [](S v) { return sigmoid(v); });
}

template <typename S>
DenseArray<S> softplus(const DenseArray<S>& x) {
  return map_elementwise(x, [](S v) { return softplus(v); });
}

template <typename S>
DenseArray<S> silu(const DenseArray<S>& x) {
  return map_elementwise(x, [](S v) { return silu(v); });
}

template <typename S>
DenseArray<S> relu(const DenseArray<S>& x) {
  return map_elementwise(x, [](S v) { return v > 0 ? v : S(0); });
}

/// Per-channel reduction over all spatial positions of an [H, W, C] map.
template <typename S>
DenseArray<S> global_pool(const DenseArray<S>& x, PoolMode mode) {
  require_rank(x.shape(), 3, "global_pool");
  const Index HW = x.dim(0) * x.dim(1);
  if (HW == 0) throw DimensionError("global_pool: empty spatial extent");
  const Index C = x.dim(2);
  DenseArray<S> out({C});
  const S* p = x.data();
  if (mode == PoolMode::Avg) {
    for (Index t = 0; t < HW; ++t)
      for (Index c = 0; c < C; ++c) out[c] += p[t * C + c];
    for (Index c = 0; c < C; ++c) out[c] /= static_cast<S>(HW);
  } else {
    for (Index c = 0; c < C; ++c) out[c] = p[c];
    for (Index t = 1; t < HW; ++t)
      for (Index c = 0; c < C; ++c) out[c] = std::max(out[c], p[t * C + c]);
  }
  return out;
}

/// Bilinear upsampling by an integer factor, half-pixel centres (align_corners = false).
template <typename S>
DenseArray<S> upsample_bilinear(const DenseArray<S>& x, Index factor) {
  require_rank(x.shape(), 3, "upsample_bilinear");
  if (factor < 2) throw ConfigError("upsample_bilinear: factor must be >= 2, got " + std::to_string(factor));
  const Index H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const Index OH = H * factor, OW = W * factor;
  DenseArray<S> out({OH, OW, C});
  auto source = [factor](Index dst, Index extent, Index& i0, Index& i1, S& frac) {
    S s = (static_cast<S>(dst) + S(0.5)) / static_cast<S>(factor) - S(0.5);
    s = std::clamp(s, S(0), static_cast<S>(extent - 1));
    i0 = static_cast<Index>(std::floor(s));
    i1 = std::min(i0 + 1, extent - 1);
    frac = s - static_cast<S>(i0);
  };
  const S* in = x.data();
  S* o = out.data();
  for (Index oi = 0; oi < OH; ++oi) {
    Index i0, i1;
    S fi;
    source(oi, H, i0, i1, fi);
    for (Index oj = 0; oj < OW; ++oj) {
      Index j0, j1;
      S fj;
      source(oj, W, j0, j1, fj);
      const S w00 = (1 - fi) * (1 - fj), w01 = (1 - fi) * fj, w10 = fi * (1 - fj), w11 = fi * fj;
      const S* p00 = in + (i0 * W + j0) * C;
      const S* p01 = in + (i0 * W + j1) * C;
      const S* p10 = in + (i1 * W + j0) * C;
      const S* p11 = in + (i1 * W + j1) * C;
      S* dst = o + (oi * OW + oj) * C;
      for (Index c = 0; c < C; ++c) dst[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
    }
  }
  return out;
}

/// Concatenate along the last axis.
template <typename S>
DenseArray<S> concat_channels(const DenseArray<S>& a, const DenseArray<S>& b) {
  if (a.rank() != b.rank() || a.rank() < 1 ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw DimensionError("concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Shape s = a.shape();
  s.back() = a.dim(-1) + b.dim(-1);
  DenseArray<S> out(s);
  auto o = out.matrix();
  o.leftCols(a.dim(-1)) = a.matrix();
  o.rightCols(b.dim(-1)) = b.matrix();
  return out;
}

}  // namespace sigma
