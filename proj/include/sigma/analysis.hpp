#pragma once

// Complexity tables, scaling fits, finite-difference gradient checks,
// oracle-equivalence sweeps and scan timing.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "sigma/flops.hpp"
#include "sigma/ssm.hpp"

namespace sigma {

/// ConMB cost in GFLOPs for a pair of H x W x C maps.
double flops_conm(Index height, Index width, Index channels, Index state = 4);
/// ConSA cost in GFLOPs for a pair of H x W x C maps.
double flops_consa(Index height, Index width, Index channels);

struct ComplexityRow {
  int stage = 0;  // 1-based
  Index height = 0, width = 0, channels = 0;
  double conm_gflops = 0;
  double consa_gflops = 0;
  double reference_conm = 0;
  std::optional<double> reference_consa;  // stage 1 has no published value
  FlopReport conm_terms;
  FlopReport consa_terms;
};

/// The four stage geometries of Sigma-Tiny at 480 x 640, with the published
/// reference cells alongside.
std::vector<ComplexityRow> complexity_table(Index state = 4);

struct CurvePoint {
  Index length = 0;  // concatenated length 2HW
  double conm_gflops = 0;
  double consa_gflops = 0;
};

/// Costs at L = 2^k for 2^lmin_log2 <= L <= 2^lmax_log2, using an H = 1 strip
/// of width L / 2.
std::vector<CurvePoint> scaling_curve(int lmin_log2, int lmax_log2, Index channels = 96, Index state = 4);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// ---------------------------------------------------------------------------
// Gradient checking

template <typename S>
struct ScanInstance {
  DiscreteScanInputs<S> in;
  DenseArray<S> grad_y;
};

/// Random selective-scan parameters: projections uniform in [-scale, scale],
/// a_log in [-1, 1], Δ bias in [-3, 0].
SelectiveSsmParams<double> random_ssm_params(std::mt19937_64& rng, Index channels, Index state, Index dt_rank,
                                             double scale = 0.5);

/// Random well-conditioned instance: Ā in [0.2, 0.95], everything else in [-1, 1].
ScanInstance<double> random_scan_instance(std::mt19937_64& rng, Index length, Index channels, Index state);

struct GradcheckReport {
  std::string op;
  Index checked = 0;  // number of coordinates compared
  double max_rel_error = 0;
  std::string worst;  // "<tensor>[flat index]"
  bool finite = true;
  std::string nonfinite_at;
  double tolerance = 0;
  bool passed = false;
};

/// Central differences of <grad_y, y> against the analytic adjoint for every
/// coordinate of x, Ā, B̄, C and D. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, 1e-6).
GradcheckReport gradcheck_scan(const ScanInstance<double>& inst, double step, double tolerance,
                               double backward_sign = 1.0);

/// Named checks: "linear", "scan" and "scan-corrupt" (sign-flipped input
/// adjoint, must fail). The instance is drawn from `seed`.
GradcheckReport gradcheck(std::string_view op, std::uint64_t seed, double step = 1e-5, double tolerance = 1e-4);

// ---------------------------------------------------------------------------
// Oracle-equivalence sweep

struct ScanCheckReport {
  Index cases = 0;
  Index failures = 0;
  double max_chunk_rel_error = 0;
  std::vector<std::string> messages;  // one per failure
  bool passed() const { return failures == 0; }
};

/// Chunked vs sequential scan, fused vs materialised scan, directional
/// flatten roundtrips, cross-scan reduction and concat-scan identities on
/// random instances.
ScanCheckReport scan_check(std::uint64_t seed, Index cases, Index max_len);

// ---------------------------------------------------------------------------
// Timing

struct BenchRow {
  Index length = 0;
  double seq_ms = 0;
  double chunked_ms = 0;
  std::optional<double> attention_ms;  // absent above the attention length cap
};

struct BenchOptions {
  Index channels = 16;
  Index state = 4;
  int repeats = 5;
  Index chunk = 64;
  Index attention_max_len = 4096;
};

/// Median wall time per length for the sequential scan, the chunked scan
/// and naive O(L^2 D) attention.
std::vector<BenchRow> bench_scan(const std::vector<Index>& lengths, const BenchOptions& opt);

}  // namespace sigma
