#pragma once

// Weights and input path shared by VSSB, CAVSSB and the CroMB branches:
// LayerNorm, an expanding projection into the scan width E, a 3x3 depthwise
// convolution with SiLU, a parallel SiLU gate, four directional scan
// parameter sets, and the projection back to C.

#include "sigma/scan2d.hpp"

namespace sigma {

inline constexpr Index kExpansion = 2;
inline constexpr Index kConvKernel = 3;

struct MixerDims {
  Index channels = 0;  // C
  Index state = 4;     // N

  Index inner() const { return kExpansion * channels; }
  SsmDims ssm() const { return {inner(), state, SsmDims::default_dt_rank(channels)}; }
};

template <typename S>
struct MixerWeights {
  DenseArray<S> norm_gamma;   // [C]
  DenseArray<S> norm_beta;    // [C]
  DenseArray<S> w_in;         // [C, E]
  DenseArray<S> w_gate;       // [C, E]
  DenseArray<S> conv_kernel;  // [3, 3, E]
  DenseArray<S> conv_bias;    // [E]
  DirectionalParams<S> ssm;   // D = E
  DenseArray<S> w_out;        // [E, C]

  template <class V>
  void visit(V& v, const MixerDims& d) {
    const Index C = d.channels, E = d.inner();
    v.param("norm_gamma", norm_gamma, {C}, ParamKind::NormScale);
    v.param("norm_beta", norm_beta, {C}, ParamKind::NormShift);
    v.param("w_in", w_in, {C, E}, ParamKind::Projection);
    v.param("w_gate", w_gate, {C, E}, ParamKind::Projection);
    v.param("conv_kernel", conv_kernel, {kConvKernel, kConvKernel, E}, ParamKind::ConvKernel);
    v.param("conv_bias", conv_bias, {E}, ParamKind::Bias);
    {
      ParamScope scope(v, "ssm");
      ssm.visit(v, d.ssm());
    }
    v.param("w_out", w_out, {E, C}, ParamKind::Projection);
  }
};

/// Scan input and gate of the mixer: u = silu(dwconv(LN(F) W_in)), z = silu(LN(F) W_gate).
template <typename S>
struct MixerInput {
  FeatureMap<S> u;     // [H, W, E]
  FeatureMap<S> gate;  // [H, W, E]
};

template <typename S>
MixerInput<S> mixer_input(const FeatureMap<S>& f, const MixerWeights<S>& w) {
  require_rank(f.shape(), 3, "mixer_input");
  if (f.dim(2) != w.norm_gamma.size()) {
    throw DimensionError("mixer: input channels " + std::to_string(f.dim(2)) + " vs weights " +
                         std::to_string(w.norm_gamma.size()));
  }
  const FeatureMap<S> normed = layer_norm(f, w.norm_gamma, w.norm_beta);
  return {silu(depthwise_conv2d(linear(normed, w.w_in), w.conv_kernel, w.conv_bias)),
          silu(linear(normed, w.w_gate))};
}

/// Gate the scanned features and project them back to C.
template <typename S>
FeatureMap<S> mixer_output(const FeatureMap<S>& scanned, const FeatureMap<S>& gate, const MixerWeights<S>& w) {
  return linear(scanned * gate, w.w_out);
}

}  // namespace sigma
