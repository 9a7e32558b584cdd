#pragma once

// Selective state space scan: selection (input-dependent B, C, Δ),
// discretisation of the diagonal continuous system, the linear recurrence
//
//   h_k = Ā_k ⊙ h_{k-1} + B̄_k x_k,     y_k = C_k · h_k + D ⊙ x_k,
//
// in sequential, chunked and fused forms, and its exact reverse-mode adjoint.
//
// Layouts: x, y, Δ are [L, D]; B, C are [L, N]; Ā, B̄ are [L, D, N]; A is [D, N].

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sigma/params.hpp"
#include "sigma/tensor_ops.hpp"

namespace sigma {

enum class Discretization {
  Taylor,  // B̄ = Δ B (first-order), the default
  Zoh,     // B̄ = (exp(Δ A) - 1) / A · B
};

struct SsmDims {
  Index channels = 0;  // D
  Index state = 0;     // N
  Index dt_rank = 1;   // rank of the Δ projection

  /// Mamba's default Δ rank, ceil(model_dim / 16).
  static Index default_dt_rank(Index model_dim) { return std::max<Index>(1, (model_dim + 15) / 16); }
};

/// Continuous diagonal system: A = -exp(a_log) per (channel, state), D skip per channel.
template <typename S>
struct ContinuousSsm {
  DenseArray<S> a_log;   // [D, N]
  DenseArray<S> d_skip;  // [D]

  DenseArray<S> state_matrix() const {
    DenseArray<S> a(a_log.shape());
    a.array() = -a_log.array().exp();
    return a;
  }
};

/// Projections that derive B, C and Δ from the input sequence.
template <typename S>
struct SelectionProjections {
  DenseArray<S> w_b;        // [D, N]
  DenseArray<S> w_c;        // [D, N]
  DenseArray<S> w_dt_down;  // [D, R]
  DenseArray<S> w_dt_up;    // [R, D]
  DenseArray<S> dt_bias;    // [D]
};

template <typename S>
struct SelectiveSsmParams {
  ContinuousSsm<S> ssm;
  SelectionProjections<S> proj;

  Index channels() const { return ssm.d_skip.size(); }
  Index state_size() const { return ssm.a_log.dim(-1); }

  template <class V>
  void visit(V& v, const SsmDims& d) {
    v.param("a_log", ssm.a_log, {d.channels, d.state}, ParamKind::StateLog);
    v.param("d_skip", ssm.d_skip, {d.channels}, ParamKind::Skip);
    v.param("w_b", proj.w_b, {d.channels, d.state}, ParamKind::Projection);
    v.param("w_c", proj.w_c, {d.channels, d.state}, ParamKind::Projection);
    v.param("w_dt_down", proj.w_dt_down, {d.channels, d.dt_rank}, ParamKind::Projection);
    v.param("w_dt_up", proj.w_dt_up, {d.dt_rank, d.channels}, ParamKind::Projection);
    v.param("dt_bias", proj.dt_bias, {d.channels}, ParamKind::DtBias);
  }
};

template <typename S>
struct Selection {
  DenseArray<S> b;      // [L, N]
  DenseArray<S> c;      // [L, N]
  DenseArray<S> delta;  // [L, D], strictly positive
};

template <typename S>
struct DiscreteScanInputs {
  DenseArray<S> a_bar;   // [L, D, N]
  DenseArray<S> b_bar;   // [L, D, N]
  DenseArray<S> c;       // [L, N]
  DenseArray<S> d_skip;  // [D]
  DenseArray<S> x;       // [L, D]

  Index length() const { return x.dim(0); }
  Index channels() const { return x.dim(1); }
  Index state() const { return c.dim(1); }

  void validate() const {
    require_rank(x.shape(), 2, "scan(x)");
    require_rank(c.shape(), 2, "scan(c)");
    const Index L = x.dim(0), D = x.dim(1), N = c.dim(1);
    require_same_shape(a_bar.shape(), {L, D, N}, "scan(a_bar)");
    require_same_shape(b_bar.shape(), {L, D, N}, "scan(b_bar)");
    require_same_shape(c.shape(), {L, N}, "scan(c)");
    require_same_shape(d_skip.shape(), {D}, "scan(d_skip)");
  }
};

template <typename S>
struct ScanGradients {
  DenseArray<S> x;       // [L, D]
  DenseArray<S> a_bar;   // [L, D, N]
  DenseArray<S> b_bar;   // [L, D, N]
  DenseArray<S> c;       // [L, N]
  DenseArray<S> d_skip;  // [D]
};

template <typename S>
void require_finite(const DenseArray<S>& a, const char* what) {
  Index bad = -1;
  if (!a.all_finite(&bad)) {
    throw NumericError(std::string(what) + ": non-finite value at flat index " + std::to_string(bad), bad);
  }
}

/// B = x W_B, C = x W_C, Δ = softplus(x W_dt_down W_dt_up + dt_bias).
template <typename S>
Selection<S> derive_selection(const DenseArray<S>& x, const SelectionProjections<S>& p) {
  require_rank(x.shape(), 2, "derive_selection");
  require_finite(x, "derive_selection");
  Selection<S> sel;
  sel.b = linear(x, p.w_b);
  sel.c = linear(x, p.w_c);
  sel.delta = softplus(linear(linear(x, p.w_dt_down), p.w_dt_up, p.dt_bias));
  return sel;
}

namespace detail {

template <typename S>
void check_discretization_args(const DenseArray<S>& a, const DenseArray<S>& b, const DenseArray<S>& delta) {
  require_rank(a.shape(), 2, "discretize(A)");
  require_rank(b.shape(), 2, "discretize(B)");
  require_rank(delta.shape(), 2, "discretize(delta)");
  if (b.dim(0) != delta.dim(0) || a.dim(0) != delta.dim(1) || a.dim(1) != b.dim(1)) {
    throw DimensionError("discretize: A " + shape_string(a.shape()) + ", B " + shape_string(b.shape()) +
                         ", delta " + shape_string(delta.shape()));
  }
  for (Index i = 0; i < a.size(); ++i) {
    if (!(a[i] < 0)) throw StabilityError("discretize: A entry " + std::to_string(i) + " is not negative");
  }
  for (Index i = 0; i < delta.size(); ++i) {
    if (!(delta[i] > 0)) throw DomainError("discretize: delta entry " + std::to_string(i) + " is not positive");
  }
}

}  // namespace detail

template <typename S>
struct DiscreteSystem {
  DenseArray<S> a_bar;  // [L, D, N]
  DenseArray<S> b_bar;  // [L, D, N]
};

/// Zero-order hold: Ā = exp(Δ A), B̄ = (exp(Δ A) - 1) / A · B.
template <typename S>
DiscreteSystem<S> discretize_zoh(const DenseArray<S>& a, const DenseArray<S>& b, const DenseArray<S>& delta) {
  detail::check_discretization_args(a, b, delta);
  const Index L = delta.dim(0), D = delta.dim(1), N = a.dim(1);
  DiscreteSystem<S> out{DenseArray<S>({L, D, N}), DenseArray<S>({L, D, N})};
  for (Index l = 0; l < L; ++l)
    for (Index d = 0; d < D; ++d)
      for (Index n = 0; n < N; ++n) {
        const S da = delta(l, d) * a(d, n);
        out.a_bar(l, d, n) = std::exp(da);
        out.b_bar(l, d, n) = std::expm1(da) / a(d, n) * b(l, n);
      }
  return out;
}

/// First-order input matrix B̄ = Δ B.
template <typename S>
DenseArray<S> discretize_taylor(const DenseArray<S>& b, const DenseArray<S>& delta) {
  require_rank(b.shape(), 2, "discretize_taylor(B)");
  require_rank(delta.shape(), 2, "discretize_taylor(delta)");
  if (b.dim(0) != delta.dim(0)) throw DimensionError("discretize_taylor: sequence length mismatch");
  for (Index i = 0; i < delta.size(); ++i) {
    if (!(delta[i] > 0)) throw DomainError("discretize_taylor: delta entry " + std::to_string(i) + " is not positive");
  }
  const Index L = delta.dim(0), D = delta.dim(1), N = b.dim(1);
  DenseArray<S> b_bar({L, D, N});
  for (Index l = 0; l < L; ++l)
    for (Index d = 0; d < D; ++d)
      for (Index n = 0; n < N; ++n) b_bar(l, d, n) = delta(l, d) * b(l, n);
  return b_bar;
}

template <typename S>
DiscreteSystem<S> discretize(const DenseArray<S>& a, const DenseArray<S>& b, const DenseArray<S>& delta,
                             Discretization mode) {
  if (mode == Discretization::Zoh) return discretize_zoh(a, b, delta);
  detail::check_discretization_args(a, b, delta);
  const Index L = delta.dim(0), D = delta.dim(1), N = a.dim(1);
  DenseArray<S> a_bar({L, D, N});
  for (Index l = 0; l < L; ++l)
    for (Index d = 0; d < D; ++d)
      for (Index n = 0; n < N; ++n) a_bar(l, d, n) = std::exp(delta(l, d) * a(d, n));
  return {std::move(a_bar), discretize_taylor(b, delta)};
}

/// Materialise the discrete recurrence for input x under `params`.
template <typename S>
DiscreteScanInputs<S> make_scan_inputs(const DenseArray<S>& x, const SelectiveSsmParams<S>& params,
                                       Discretization mode = Discretization::Taylor) {
  Selection<S> sel = derive_selection(x, params.proj);
  DiscreteSystem<S> sys = discretize(params.ssm.state_matrix(), sel.b, sel.delta, mode);
  return {std::move(sys.a_bar), std::move(sys.b_bar), std::move(sel.c), params.ssm.d_skip, x};
}

/// Exact left-to-right recurrence with h_0 = 0.
template <typename S>
DenseArray<S> selective_scan_seq(const DiscreteScanInputs<S>& in) {
  in.validate();
  const Index L = in.length(), D = in.channels(), N = in.state();
  DenseArray<S> y({L, D});
  std::vector<S> h(static_cast<std::size_t>(D * N), S(0));
  for (Index l = 0; l < L; ++l) {
    const S* a = in.a_bar.data() + l * D * N;
    const S* b = in.b_bar.data() + l * D * N;
    const S* c = in.c.data() + l * N;
    for (Index d = 0; d < D; ++d) {
      const S xv = in.x(l, d);
      S acc = 0;
      for (Index n = 0; n < N; ++n) {
        S& hv = h[static_cast<std::size_t>(d * N + n)];
        hv = a[d * N + n] * hv + b[d * N + n] * xv;
        acc += c[n] * hv;
      }
      const S out = acc + in.d_skip[d] * xv;
      if (!std::isfinite(out)) {
        throw NumericError("selective_scan: non-finite value at step " + std::to_string(l) + ", channel " +
                               std::to_string(d),
                           l * D + d);
      }
      y(l, d) = out;
    }
  }
  return y;
}

/// Chunked evaluation through the associative composition
/// (a2, b2) ∘ (a1, b1) = (a2 a1, a2 b1 + b2):
///   1. each chunk is scanned from a zero state, recording its end state and
///      the running product of Ā (chunks are independent),
///   2. chunk carries are combined left to right,
///   3. each chunk is re-scanned and corrected with its incoming carry.
template <typename S>
DenseArray<S> selective_scan_chunked(const DiscreteScanInputs<S>& in, Index chunk) {
  if (chunk < 1) throw ConfigError("selective_scan_chunked: chunk must be >= 1");
  in.validate();
  const Index L = in.length(), D = in.channels(), N = in.state();
  const Index lanes = D * N;
  const Index n_chunks = (L + chunk - 1) / chunk;
  // Per-chunk summary of the composed affine map: h_end = prod * h_in + local.
  std::vector<S> prod(static_cast<std::size_t>(n_chunks * lanes), S(1));
  std::vector<S> local(static_cast<std::size_t>(n_chunks * lanes), S(0));

  for (Index k = 0; k < n_chunks; ++k) {
    S* pk = prod.data() + k * lanes;
    S* hk = local.data() + k * lanes;
    for (Index l = k * chunk; l < std::min(L, (k + 1) * chunk); ++l) {
      const S* a = in.a_bar.data() + l * lanes;
      const S* b = in.b_bar.data() + l * lanes;
      for (Index d = 0; d < D; ++d) {
        const S xv = in.x(l, d);
        for (Index n = 0; n < N; ++n) {
          const Index i = d * N + n;
          hk[i] = a[i] * hk[i] + b[i] * xv;
          pk[i] = pk[i] * a[i];
        }
      }
    }
  }

  // carry[k] is the state entering chunk k.
  std::vector<S> carry(static_cast<std::size_t>(n_chunks * lanes), S(0));
  for (Index k = 1; k < n_chunks; ++k) {
    const S* prev = carry.data() + (k - 1) * lanes;
    const S* pk = prod.data() + (k - 1) * lanes;
    const S* hk = local.data() + (k - 1) * lanes;
    S* cur = carry.data() + k * lanes;
    for (Index i = 0; i < lanes; ++i) cur[i] = hk[i] + pk[i] * prev[i];
  }

  DenseArray<S> y({L, D});
  std::vector<S> h(static_cast<std::size_t>(lanes));
  std::vector<S> p(static_cast<std::size_t>(lanes));
  for (Index k = 0; k < n_chunks; ++k) {
    std::fill(h.begin(), h.end(), S(0));
    std::fill(p.begin(), p.end(), S(1));
    const S* in_state = carry.data() + k * lanes;
    for (Index l = k * chunk; l < std::min(L, (k + 1) * chunk); ++l) {
      const S* a = in.a_bar.data() + l * lanes;
      const S* b = in.b_bar.data() + l * lanes;
      const S* c = in.c.data() + l * N;
      for (Index d = 0; d < D; ++d) {
        const S xv = in.x(l, d);
        S acc = 0;
        for (Index n = 0; n < N; ++n) {
          const Index i = d * N + n;
          h[i] = a[i] * h[i] + b[i] * xv;
          p[i] = p[i] * a[i];
          acc += c[n] * (h[i] + p[i] * in_state[i]);
        }
        const S out = acc + in.d_skip[d] * xv;
        if (!std::isfinite(out)) {
          throw NumericError("selective_scan_chunked: non-finite value at step " + std::to_string(l) +
                                 ", channel " + std::to_string(d),
                             l * D + d);
        }
        y(l, d) = out;
      }
    }
  }
  return y;
}

/// Reverse-mode adjoint of the recurrence for the scalar loss <grad_y, y>.
/// Hidden states are checkpointed every `checkpoint` steps and recomputed
/// chunk by chunk, so working memory is O(D·N·checkpoint).
/// `sign` exists only for fault-injection tests; keep it at +1.
template <typename S>
ScanGradients<S> selective_scan_backward(const DiscreteScanInputs<S>& in, const DenseArray<S>& grad_y,
                                         Index checkpoint = 16, S sign = S(1)) {
  in.validate();
  require_same_shape(grad_y.shape(), in.x.shape(), "selective_scan_backward(grad_y)");
  if (checkpoint < 1) throw ConfigError("selective_scan_backward: checkpoint must be >= 1");
  const Index L = in.length(), D = in.channels(), N = in.state();
  const Index lanes = D * N;
  const Index n_chunks = (L + checkpoint - 1) / checkpoint;

  // State entering each chunk.
  std::vector<S> starts(static_cast<std::size_t>(n_chunks * lanes), S(0));
  {
    std::vector<S> h(static_cast<std::size_t>(lanes), S(0));
    for (Index l = 0; l < L; ++l) {
      if (l % checkpoint == 0) std::copy(h.begin(), h.end(), starts.begin() + (l / checkpoint) * lanes);
      const S* a = in.a_bar.data() + l * lanes;
      const S* b = in.b_bar.data() + l * lanes;
      for (Index d = 0; d < D; ++d) {
        const S xv = in.x(l, d);
        for (Index n = 0; n < N; ++n) {
          const Index i = d * N + n;
          h[i] = a[i] * h[i] + b[i] * xv;
        }
      }
    }
  }

  ScanGradients<S> g{DenseArray<S>({L, D}), DenseArray<S>({L, D, N}), DenseArray<S>({L, D, N}),
                     DenseArray<S>({L, N}), DenseArray<S>({D})};
  // adj carries Ā_{t+1} ⊙ ∂loss/∂h_{t+1} into step t.
  std::vector<S> adj(static_cast<std::size_t>(lanes), S(0));
  std::vector<S> states(static_cast<std::size_t>(checkpoint * lanes));

  for (Index k = n_chunks - 1; k >= 0; --k) {
    const Index l0 = k * checkpoint;
    const Index l1 = std::min(L, l0 + checkpoint);
    {
      const S* h_prev = starts.data() + k * lanes;
      for (Index l = l0; l < l1; ++l) {
        const S* a = in.a_bar.data() + l * lanes;
        const S* b = in.b_bar.data() + l * lanes;
        S* h = states.data() + (l - l0) * lanes;
        for (Index d = 0; d < D; ++d) {
          const S xv = in.x(l, d);
          for (Index n = 0; n < N; ++n) {
            const Index i = d * N + n;
            h[i] = a[i] * h_prev[i] + b[i] * xv;
          }
        }
        h_prev = h;
      }
    }
    for (Index l = l1 - 1; l >= l0; --l) {
      const S* h = states.data() + (l - l0) * lanes;
      const S* h_prev = l > l0 ? states.data() + (l - l0 - 1) * lanes : starts.data() + k * lanes;
      const S* a = in.a_bar.data() + l * lanes;
      const S* b = in.b_bar.data() + l * lanes;
      const S* c = in.c.data() + l * N;
      for (Index d = 0; d < D; ++d) {
        const S gy = grad_y(l, d);
        const S xv = in.x(l, d);
        S gx = in.d_skip[d] * gy;
        for (Index n = 0; n < N; ++n) {
          const Index i = d * N + n;
          const S gh = adj[static_cast<std::size_t>(i)] + c[n] * gy;
          g.c(l, n) += gy * h[i];
          g.a_bar(l, d, n) = gh * h_prev[i];
          g.b_bar(l, d, n) = gh * xv;
          gx += gh * b[i];
          adj[static_cast<std::size_t>(i)] = a[i] * gh;
        }
        g.x(l, d) = sign * gx;
        g.d_skip[d] += gy * xv;
      }
    }
  }
  return g;
}

/// Fused scan straight from a selection: Ā and B̄ x are formed on the fly
/// without materialising [L, D, N] tensors. With the Taylor rule the input
/// term is (Δ x) B; with ZOH it is expm1(Δ A) / A · B x.
template <typename S>
DenseArray<S> selective_scan(const DenseArray<S>& x, const Selection<S>& sel, const DenseArray<S>& a,
                             const DenseArray<S>& d_skip, Discretization mode = Discretization::Taylor) {
  require_rank(x.shape(), 2, "selective_scan(x)");
  const Index L = x.dim(0), D = x.dim(1), N = a.dim(1);
  require_same_shape(sel.delta.shape(), {L, D}, "selective_scan(delta)");
  require_same_shape(sel.b.shape(), {L, N}, "selective_scan(B)");
  require_same_shape(sel.c.shape(), {L, N}, "selective_scan(C)");
  require_same_shape(a.shape(), {D, N}, "selective_scan(A)");
  require_same_shape(d_skip.shape(), {D}, "selective_scan(D)");
  for (Index i = 0; i < a.size(); ++i) {
    if (!(a[i] < 0)) throw StabilityError("selective_scan: A entry " + std::to_string(i) + " is not negative");
  }
  DenseArray<S> y({L, D});
  std::vector<S> h(static_cast<std::size_t>(D * N), S(0));
  for (Index l = 0; l < L; ++l) {
    const S* b = sel.b.data() + l * N;
    const S* c = sel.c.data() + l * N;
    for (Index d = 0; d < D; ++d) {
      const S dt = sel.delta(l, d);
      if (!(dt > 0)) throw DomainError("selective_scan: delta at step " + std::to_string(l) + " is not positive");
      const S xv = x(l, d);
      const S dx = dt * xv;
      const S* ad = a.data() + d * N;
      S* hd = h.data() + d * N;
      S acc = 0;
      if (mode == Discretization::Taylor) {
        for (Index n = 0; n < N; ++n) {
          hd[n] = std::exp(dt * ad[n]) * hd[n] + dx * b[n];
          acc += c[n] * hd[n];
        }
      } else {
        for (Index n = 0; n < N; ++n) {
          const S da = dt * ad[n];
          hd[n] = std::exp(da) * hd[n] + std::expm1(da) / ad[n] * b[n] * xv;
          acc += c[n] * hd[n];
        }
      }
      const S out = acc + d_skip[d] * xv;
      if (!std::isfinite(out)) {
        throw NumericError("selective_scan: non-finite value at step " + std::to_string(l) + ", channel " +
                               std::to_string(d),
                           l * D + d);
      }
      y(l, d) = out;
    }
  }
  return y;
}

/// Full selective scan of x under `params`: selection, discretisation, recurrence.
template <typename S>
DenseArray<S> selective_scan(const DenseArray<S>& x, const SelectiveSsmParams<S>& params,
                             Discretization mode = Discretization::Taylor) {
  const Selection<S> sel = derive_selection(x, params.proj);
  return selective_scan(x, sel, params.ssm.state_matrix(), params.ssm.d_skip, mode);
}

}  // namespace sigma
