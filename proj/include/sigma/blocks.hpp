#pragma once

// Encoder and decoder building blocks: VSSB, channel-aware CAVSSB, the 4x4
// patch stem and 2x2 patch-merging downsample.

#include "sigma/mixer.hpp"

namespace sigma {

inline constexpr Index kPatchSize = 4;
inline constexpr Index kAttentionReduction = 4;

template <typename S>
using VssbWeights = MixerWeights<S>;

/// Residual branch of a VSSB: LN → Linear → DWConv → SiLU → SS2D, gated, projected back.
template <typename S>
FeatureMap<S> vssb_core(const FeatureMap<S>& f, const VssbWeights<S>& w,
                        Discretization mode = Discretization::Taylor) {
  const MixerInput<S> in = mixer_input(f, w);
  return mixer_output(ss2d(in.u, w.ssm, mode), in.gate, w);
}

template <typename S>
FeatureMap<S> vssb(const FeatureMap<S>& f, const VssbWeights<S>& w, Discretization mode = Discretization::Taylor) {
  return f + vssb_core(f, w, mode);
}

struct CavssbDims {
  MixerDims mixer;
  Index hidden() const { return std::max<Index>(1, mixer.channels / kAttentionReduction); }
};

template <typename S>
struct CavssbWeights {
  MixerWeights<S> mixer;
  DenseArray<S> ca_w1;  // [C, C/4], shared by both pooled branches
  DenseArray<S> ca_w2;  // [C/4, C]

  template <class V>
  void visit(V& v, const CavssbDims& d) {
    mixer.visit(v, d.mixer);
    v.param("ca_w1", ca_w1, {d.mixer.channels, d.hidden()}, ParamKind::Projection);
    v.param("ca_w2", ca_w2, {d.hidden(), d.mixer.channels}, ParamKind::Projection);
  }
};

/// sigmoid(MLP(avg_pool(F)) + MLP(max_pool(F))), MLP = ReLU bottleneck. Returns [C] in (0, 1).
template <typename S>
DenseArray<S> channel_attention(const FeatureMap<S>& f, const DenseArray<S>& w1, const DenseArray<S>& w2) {
  const Index C = f.dim(-1);
  auto mlp = [&](const DenseArray<S>& pooled) { return linear(relu(linear(pooled.reshaped({1, C}), w1)), w2); };
  return sigmoid(mlp(global_pool(f, PoolMode::Avg)) + mlp(global_pool(f, PoolMode::Max))).reshaped({C});
}

/// F1 = F + VSSB-core(F); out = F1 + a ⊙ F1 with a the channel attention of F1.
template <typename S>
FeatureMap<S> cavssb(const FeatureMap<S>& f, const CavssbWeights<S>& w,
                     Discretization mode = Discretization::Taylor) {
  const FeatureMap<S> f1 = f + vssb_core(f, w.mixer, mode);
  const DenseArray<S> a = channel_attention(f1, w.ca_w1, w.ca_w2);
  return f1 + broadcast_last(a, f1.shape()) * f1;
}

struct StemDims {
  Index in_channels = 3;
  Index out_channels = 96;
  Index patch_features() const { return kPatchSize * kPatchSize * in_channels; }
};

template <typename S>
struct StemWeights {
  DenseArray<S> w_embed;     // [4*4*3, C1]
  DenseArray<S> b_embed;     // [C1]
  DenseArray<S> norm_gamma;  // [C1]
  DenseArray<S> norm_beta;   // [C1]

  template <class V>
  void visit(V& v, const StemDims& d) {
    v.param("w_embed", w_embed, {d.patch_features(), d.out_channels}, ParamKind::Projection);
    v.param("b_embed", b_embed, {d.out_channels}, ParamKind::Bias);
    v.param("norm_gamma", norm_gamma, {d.out_channels}, ParamKind::NormScale);
    v.param("norm_beta", norm_beta, {d.out_channels}, ParamKind::NormShift);
  }
};

/// Gather non-overlapping p x p patches: [H, W, C] -> [H/p, W/p, p*p*C], patch
/// features ordered (row in patch, column in patch, channel).
template <typename S>
DenseArray<S> gather_patches(const DenseArray<S>& x, Index p) {
  require_rank(x.shape(), 3, "gather_patches");
  const Index H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (H % p != 0 || W % p != 0) {
    throw ConfigError("gather_patches: " + std::to_string(H) + "x" + std::to_string(W) +
                      " is not divisible by " + std::to_string(p));
  }
  const Index OH = H / p, OW = W / p;
  DenseArray<S> out({OH, OW, p * p * C});
  for (Index i = 0; i < OH; ++i)
    for (Index j = 0; j < OW; ++j)
      for (Index di = 0; di < p; ++di)
        for (Index dj = 0; dj < p; ++dj)
          for (Index c = 0; c < C; ++c) out(i, j, (di * p + dj) * C + c) = x(i * p + di, j * p + dj, c);
  return out;
}

/// 4x4 patch embedding followed by LayerNorm: [H, W, 3] -> [H/4, W/4, C1].
template <typename S>
FeatureMap<S> patch_stem(const DenseArray<S>& image, const StemWeights<S>& w) {
  require_rank(image.shape(), 3, "patch_stem");
  if (image.dim(2) * kPatchSize * kPatchSize != w.w_embed.dim(0)) {
    throw DimensionError("patch_stem: image channels " + std::to_string(image.dim(2)) + " vs weights");
  }
  return layer_norm(linear(gather_patches(image, kPatchSize), w.w_embed, w.b_embed), w.norm_gamma, w.norm_beta);
}

struct DownsampleDims {
  Index in_channels = 96;
  Index merged() const { return 4 * in_channels; }
  Index out_channels() const { return 2 * in_channels; }
};

template <typename S>
struct DownsampleWeights {
  DenseArray<S> norm_gamma;  // [4C]
  DenseArray<S> norm_beta;   // [4C]
  DenseArray<S> w_reduce;    // [4C, 2C]

  template <class V>
  void visit(V& v, const DownsampleDims& d) {
    v.param("norm_gamma", norm_gamma, {d.merged()}, ParamKind::NormScale);
    v.param("norm_beta", norm_beta, {d.merged()}, ParamKind::NormShift);
    v.param("w_reduce", w_reduce, {d.merged(), d.out_channels()}, ParamKind::Projection);
  }
};

/// 2x2 patch merging: gather, LayerNorm over 4C, project to 2C.
template <typename S>
FeatureMap<S> downsample(const FeatureMap<S>& f, const DownsampleWeights<S>& w) {
  require_rank(f.shape(), 3, "downsample");
  if (f.dim(0) % 2 != 0 || f.dim(1) % 2 != 0) {
    throw ConfigError("downsample: odd spatial extent " + shape_string(f.shape()));
  }
  return linear(layer_norm(gather_patches(f, Index{2}), w.norm_gamma, w.norm_beta), w.w_reduce);
}

}  // namespace sigma
