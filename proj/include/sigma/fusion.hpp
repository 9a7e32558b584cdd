#pragma once

// Two-modality fusion kernels.
//
// Cross selective scan (CroMB): each modality runs its own recurrence, but the
// matrices named by CrossExchangeMode (default: the output matrix C) are taken
// from the other modality.
//
// Concat selective scan (ConMB): the two flattened sequences are joined along
// the length axis, scanned forward and in reverse, summed, and split again.
//
// ConSA replaces the concat scan with softmax self-attention; it exists for
// the complexity comparison.

#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "sigma/mixer.hpp"

namespace sigma {

enum class CrossExchangeMode { C, B, D, BAndC, CAndD };

inline std::string_view to_string(CrossExchangeMode m) {
  switch (m) {
    case CrossExchangeMode::C: return "C";
    case CrossExchangeMode::B: return "B";
    case CrossExchangeMode::D: return "D";
    case CrossExchangeMode::BAndC: return "B&C";
    case CrossExchangeMode::CAndD: return "C&D";
  }
  return "?";
}

inline CrossExchangeMode parse_cross_mode(std::string_view s) {
  if (s == "C") return CrossExchangeMode::C;
  if (s == "B") return CrossExchangeMode::B;
  if (s == "D") return CrossExchangeMode::D;
  if (s == "B&C" || s == "BC") return CrossExchangeMode::BAndC;
  if (s == "C&D" || s == "CD") return CrossExchangeMode::CAndD;
  throw ConfigError("unknown cross exchange mode '" + std::string(s) + "' (expected C, B, D, B&C, C&D)");
}

inline bool exchanges_b(CrossExchangeMode m) { return m == CrossExchangeMode::B || m == CrossExchangeMode::BAndC; }
inline bool exchanges_c(CrossExchangeMode m) {
  return m == CrossExchangeMode::C || m == CrossExchangeMode::BAndC || m == CrossExchangeMode::CAndD;
}
inline bool exchanges_d(CrossExchangeMode m) { return m == CrossExchangeMode::D || m == CrossExchangeMode::CAndD; }

template <typename S>
struct ModalityPair {
  FeatureMap<S> rgb;
  FeatureMap<S> x;

  void validate(const char* op) const {
    require_rank(rgb.shape(), 3, op);
    require_same_shape(rgb.shape(), x.shape(), op);
  }
};

template <typename S>
struct SequencePair {
  DenseArray<S> rgb;
  DenseArray<S> x;
};

template <typename S>
SequencePair<S> cross_selective_scan(const DenseArray<S>& seq_rgb, const DenseArray<S>& seq_x,
                                     const SelectiveSsmParams<S>& params_rgb, const SelectiveSsmParams<S>& params_x,
                                     CrossExchangeMode mode = CrossExchangeMode::C,
                                     Discretization disc = Discretization::Taylor) {
  require_same_shape(seq_rgb.shape(), seq_x.shape(), "cross_selective_scan");
  Selection<S> sel_rgb = derive_selection(seq_rgb, params_rgb.proj);
  Selection<S> sel_x = derive_selection(seq_x, params_x.proj);
  const DenseArray<S>* d_rgb = &params_rgb.ssm.d_skip;
  const DenseArray<S>* d_x = &params_x.ssm.d_skip;
  if (exchanges_b(mode)) std::swap(sel_rgb.b, sel_x.b);
  if (exchanges_c(mode)) std::swap(sel_rgb.c, sel_x.c);
  if (exchanges_d(mode)) std::swap(d_rgb, d_x);
  return {selective_scan(seq_rgb, sel_rgb, params_rgb.ssm.state_matrix(), *d_rgb, disc),
          selective_scan(seq_x, sel_x, params_x.ssm.state_matrix(), *d_x, disc)};
}

template <typename S>
struct CrombWeights {
  MixerWeights<S> rgb;
  MixerWeights<S> x;

  template <class V>
  void visit(V& v, const MixerDims& d) {
    {
      ParamScope scope(v, "rgb");
      rgb.visit(v, d);
    }
    ParamScope scope(v, "x");
    x.visit(v, d);
  }
};

/// Cross Mamba block. Per modality: LN → Linear → DWConv → SiLU, then for each
/// of the four directions a cross selective scan against the other modality's
/// same-direction sequence, gate, project back, residual.
template <typename S>
ModalityPair<S> cromb(const ModalityPair<S>& pair, const CrombWeights<S>& w,
                      CrossExchangeMode mode = CrossExchangeMode::C, Discretization disc = Discretization::Taylor) {
  pair.validate("cromb");
  const Index H = pair.rgb.dim(0), W = pair.rgb.dim(1);
  const MixerInput<S> in_rgb = mixer_input(pair.rgb, w.rgb);
  const MixerInput<S> in_x = mixer_input(pair.x, w.x);
  FeatureMap<S> acc_rgb(in_rgb.u.shape());
  FeatureMap<S> acc_x(in_x.u.shape());
  for (std::size_t k = 0; k < kScanDirections.size(); ++k) {
    const ScanDirection dir = kScanDirections[k];
    const SequencePair<S> y = cross_selective_scan(flatten_direction(in_rgb.u, dir), flatten_direction(in_x.u, dir),
                                                   w.rgb.ssm.dirs[k], w.x.ssm.dirs[k], mode, disc);
    acc_rgb += unflatten_direction(y.rgb, dir, H, W);
    acc_x += unflatten_direction(y.x, dir, H, W);
  }
  return {pair.rgb + mixer_output(acc_rgb, in_rgb.gate, w.rgb), pair.x + mixer_output(acc_x, in_x.gate, w.x)};
}

template <typename S>
DenseArray<S> concat_length(const DenseArray<S>& a, const DenseArray<S>& b) {
  require_rank(a.shape(), 2, "concat_length");
  require_rank(b.shape(), 2, "concat_length");
  if (a.dim(1) != b.dim(1)) throw DimensionError("concat_length: channel mismatch");
  DenseArray<S> out({a.dim(0) + b.dim(0), a.dim(1)});
  out.matrix().topRows(a.dim(0)) = a.matrix();
  out.matrix().bottomRows(b.dim(0)) = b.matrix();
  return out;
}

/// Split a [2L, D] sequence into its two halves (first half first).
template <typename S>
SequencePair<S> separate(const DenseArray<S>& s) {
  require_rank(s.shape(), 2, "separate");
  if (s.dim(0) % 2 != 0) throw DimensionError("separate: odd sequence length");
  const Index L = s.dim(0) / 2, D = s.dim(1);
  SequencePair<S> out{DenseArray<S>({L, D}), DenseArray<S>({L, D})};
  out.rgb.matrix() = s.matrix().topRows(L);
  out.x.matrix() = s.matrix().bottomRows(L);
  return out;
}

/// Reverse the order of rows (sequence positions).
template <typename S>
DenseArray<S> reverse_sequence(const DenseArray<S>& s) {
  require_rank(s.shape(), 2, "reverse_sequence");
  DenseArray<S> out(s.shape());
  out.matrix() = s.matrix().colwise().reverse();
  return out;
}

/// separate(scan(S) + reverse(scan(reverse(S)))) with S = concat(rgb, x).
/// Both passes share `params`.
template <typename S>
SequencePair<S> concat_selective_scan(const DenseArray<S>& seq_rgb, const DenseArray<S>& seq_x,
                                      const SelectiveSsmParams<S>& params,
                                      Discretization disc = Discretization::Taylor) {
  require_same_shape(seq_rgb.shape(), seq_x.shape(), "concat_selective_scan");
  const DenseArray<S> joined = concat_length(seq_rgb, seq_x);
  const DenseArray<S> forward = selective_scan(joined, params, disc);
  const DenseArray<S> inverse = reverse_sequence(selective_scan(reverse_sequence(joined), params, disc));
  return separate(forward + inverse);
}

struct FusionDims {
  Index channels = 0;  // C
  Index state = 4;     // N

  Index inner() const { return kExpansion * channels; }
  SsmDims ssm() const { return {inner(), state, SsmDims::default_dt_rank(channels)}; }
};

/// Linear + DWConv input branch of ConMB / ConSA (one per modality).
template <typename S>
struct ConcatBranchWeights {
  DenseArray<S> w_in;         // [C, E]
  DenseArray<S> conv_kernel;  // [3, 3, E]
  DenseArray<S> conv_bias;    // [E]

  template <class V>
  void visit(V& v, const FusionDims& d) {
    v.param("w_in", w_in, {d.channels, d.inner()}, ParamKind::Projection);
    v.param("conv_kernel", conv_kernel, {kConvKernel, kConvKernel, d.inner()}, ParamKind::ConvKernel);
    v.param("conv_bias", conv_bias, {d.inner()}, ParamKind::Bias);
  }
};

template <typename S>
FeatureMap<S> concat_branch(const FeatureMap<S>& f, const ConcatBranchWeights<S>& w) {
  return depthwise_conv2d(linear(f, w.w_in), w.conv_kernel, w.conv_bias);
}

/// Scaled channel concatenation [s_rgb·F_rgb, s_x·F_x] followed by a 2E → C projection.
template <typename S>
struct MergeWeights {
  DenseArray<S> scale_rgb;  // [1]
  DenseArray<S> scale_x;    // [1]
  DenseArray<S> w_out;      // [2E, C]

  template <class V>
  void visit(V& v, const FusionDims& d) {
    v.param("scale_rgb", scale_rgb, {1}, ParamKind::Scale);
    v.param("scale_x", scale_x, {1}, ParamKind::Scale);
    v.param("w_out", w_out, {2 * d.inner(), d.channels}, ParamKind::Projection);
  }
};

template <typename S>
FeatureMap<S> merge_modalities(const FeatureMap<S>& rgb, const FeatureMap<S>& x, const MergeWeights<S>& w) {
  return linear(concat_channels(w.scale_rgb[0] * rgb, w.scale_x[0] * x), w.w_out);
}

template <typename S>
struct ConmbWeights {
  ConcatBranchWeights<S> rgb;
  ConcatBranchWeights<S> x;
  SelectiveSsmParams<S> scan;  // D = E, shared by forward and inverse passes
  MergeWeights<S> merge;

  template <class V>
  void visit(V& v, const FusionDims& d) {
    {
      ParamScope scope(v, "rgb");
      rgb.visit(v, d);
    }
    {
      ParamScope scope(v, "x");
      x.visit(v, d);
    }
    {
      ParamScope scope(v, "scan");
      scan.visit(v, d.ssm());
    }
    merge.visit(v, d);
  }
};

/// Concat Mamba block: [H, W, C] x 2 -> [H, W, C].
template <typename S>
FeatureMap<S> conmb(const ModalityPair<S>& pair, const ConmbWeights<S>& w,
                    Discretization disc = Discretization::Taylor) {
  pair.validate("conmb");
  const Index H = pair.rgb.dim(0), W = pair.rgb.dim(1);
  const FeatureMap<S> u_rgb = concat_branch(pair.rgb, w.rgb);
  const FeatureMap<S> u_x = concat_branch(pair.x, w.x);
  const SequencePair<S> y = concat_selective_scan(flatten_direction(u_rgb, ScanDirection::RowMajor),
                                                  flatten_direction(u_x, ScanDirection::RowMajor), w.scan, disc);
  return merge_modalities(unflatten_direction(y.rgb, ScanDirection::RowMajor, H, W),
                          unflatten_direction(y.x, ScanDirection::RowMajor, H, W), w.merge);
}

template <typename S>
struct AttentionWeights {
  DenseArray<S> w_q, w_k, w_v, w_o;  // [E, E]

  template <class V>
  void visit(V& v, Index width) {
    v.param("w_q", w_q, {width, width}, ParamKind::Projection);
    v.param("w_k", w_k, {width, width}, ParamKind::Projection);
    v.param("w_v", w_v, {width, width}, ParamKind::Projection);
    v.param("w_o", w_o, {width, width}, ParamKind::Projection);
  }
};

/// Row-wise numerically stable softmax of a [rows, cols] matrix, in place.
template <typename Derived>
void softmax_rows(Eigen::MatrixBase<Derived>& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    const auto mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
}

/// Single-head scaled dot-product self-attention over a [L, E] sequence.
template <typename S>
DenseArray<S> self_attention(const DenseArray<S>& seq, const AttentionWeights<S>& w) {
  require_rank(seq.shape(), 2, "self_attention");
  const DenseArray<S> q = linear(seq, w.w_q), k = linear(seq, w.w_k), v = linear(seq, w.w_v);
  RowMatrix<S> scores = q.matrix() * k.matrix().transpose();
  scores *= S(1) / std::sqrt(static_cast<S>(seq.dim(1)));
  softmax_rows(scores);
  DenseArray<S> mixed(seq.shape());
  mixed.matrix().noalias() = scores * v.matrix();
  return linear(mixed, w.w_o);
}

template <typename S>
struct ConsaWeights {
  ConcatBranchWeights<S> rgb;
  ConcatBranchWeights<S> x;
  AttentionWeights<S> attention;
  MergeWeights<S> merge;

  template <class V>
  void visit(V& v, const FusionDims& d) {
    {
      ParamScope scope(v, "rgb");
      rgb.visit(v, d);
    }
    {
      ParamScope scope(v, "x");
      x.visit(v, d);
    }
    {
      ParamScope scope(v, "attention");
      attention.visit(v, d.inner());
    }
    merge.visit(v, d);
  }
};

/// ConMB with the concat scan replaced by self-attention over the joined sequence.
template <typename S>
FeatureMap<S> consa_baseline(const ModalityPair<S>& pair, const ConsaWeights<S>& w) {
  pair.validate("consa_baseline");
  const Index H = pair.rgb.dim(0), W = pair.rgb.dim(1);
  const DenseArray<S> joined =
      concat_length(flatten_direction(concat_branch(pair.rgb, w.rgb), ScanDirection::RowMajor),
                    flatten_direction(concat_branch(pair.x, w.x), ScanDirection::RowMajor));
  const SequencePair<S> y = separate(self_attention(joined, w.attention));
  return merge_modalities(unflatten_direction(y.rgb, ScanDirection::RowMajor, H, W),
                          unflatten_direction(y.x, ScanDirection::RowMajor, H, W), w.merge);
}

}  // namespace sigma
