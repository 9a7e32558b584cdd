#include "sigma/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "sigma/fusion.hpp"
#include "sigma/scan2d.hpp"

namespace sigma {

double flops_conm(Index height, Index width, Index channels, Index state) {
  return flops::conmb(static_cast<double>(height), static_cast<double>(width), static_cast<double>(channels),
                      static_cast<double>(state))
      .gflops();
}

double flops_consa(Index height, Index width, Index channels) {
  return flops::consa(static_cast<double>(height), static_cast<double>(width), static_cast<double>(channels))
      .gflops();
}

std::vector<ComplexityRow> complexity_table(Index state) {
  struct Cell {
    Index h, w, c;
    double conm;
    std::optional<double> consa;
  };
  static const Cell kCells[] = {
      {120, 160, 96, 1.82, std::nullopt},
      {60, 80, 192, 1.71, 77.89},
      {30, 40, 384, 1.65, 15.94},
      {15, 20, 768, 1.62, 8.19},
  };
  std::vector<ComplexityRow> rows;
  int stage = 1;
  for (const Cell& cell : kCells) {
    ComplexityRow r;
    r.stage = stage++;
    r.height = cell.h;
    r.width = cell.w;
    r.channels = cell.c;
    r.conm_terms = flops::conmb(double(cell.h), double(cell.w), double(cell.c), double(state));
    r.consa_terms = flops::consa(double(cell.h), double(cell.w), double(cell.c));
    r.conm_gflops = r.conm_terms.gflops();
    r.consa_gflops = r.consa_terms.gflops();
    r.reference_conm = cell.conm;
    r.reference_consa = cell.consa;
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<CurvePoint> scaling_curve(int lmin_log2, int lmax_log2, Index channels, Index state) {
  if (lmin_log2 < 1 || lmax_log2 < lmin_log2 || lmax_log2 > 40) {
    throw ConfigError("scaling_curve: need 1 <= lmin <= lmax <= 40 (log2 lengths)");
  }
  std::vector<CurvePoint> out;
  for (int k = lmin_log2; k <= lmax_log2; ++k) {
    const Index L = Index{1} << k;
    out.push_back({L, flops_conm(1, L / 2, channels, state), flops_consa(1, L / 2, channels)});
  }
  return out;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("loglog_slope: need two or more paired samples");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw DomainError("loglog_slope: samples must be positive");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace {

void fill_uniform(DenseArray<double>& a, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : a.values()) v = dist(rng);
}

DenseArray<double> uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  DenseArray<double> a(shape);
  fill_uniform(a, rng, lo, hi);
  return a;
}

Index uniform_index(std::mt19937_64& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

}  // namespace

SelectiveSsmParams<double> random_ssm_params(std::mt19937_64& rng, Index channels, Index state, Index dt_rank,
                                             double scale) {
  SelectiveSsmParams<double> p;
  p.ssm.a_log = uniform({channels, state}, rng);
  p.ssm.d_skip = uniform({channels}, rng);
  p.proj.w_b = uniform({channels, state}, rng, -scale, scale);
  p.proj.w_c = uniform({channels, state}, rng, -scale, scale);
  p.proj.w_dt_down = uniform({channels, dt_rank}, rng, -scale, scale);
  p.proj.w_dt_up = uniform({dt_rank, channels}, rng, -scale, scale);
  p.proj.dt_bias = uniform({channels}, rng, -3, 0);
  return p;
}

ScanInstance<double> random_scan_instance(std::mt19937_64& rng, Index length, Index channels, Index state) {
  ScanInstance<double> s;
  s.in.a_bar = uniform({length, channels, state}, rng, 0.2, 0.95);
  s.in.b_bar = uniform({length, channels, state}, rng);
  s.in.c = uniform({length, state}, rng);
  s.in.d_skip = uniform({channels}, rng);
  s.in.x = uniform({length, channels}, rng);
  s.grad_y = uniform({length, channels}, rng);
  return s;
}

namespace {

double loss(const DenseArray<double>& grad_y, const DenseArray<double>& y) {
  return (grad_y.array() * y.array()).sum();
}

double coordinate_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Compare `analytic` with central differences of `f` over every coordinate
/// of `param`, which `f` reads by reference.
void check_tensor(GradcheckReport& rep, const char* name, DenseArray<double>& param,
                  const DenseArray<double>& analytic, const std::function<double()>& f, double step) {
  for (Index i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + step;
    const double up = f();
    param[i] = saved - step;
    const double down = f();
    param[i] = saved;
    const double numeric = (up - down) / (2 * step);
    const double a = analytic[i];
    ++rep.checked;
    if (!std::isfinite(numeric) || !std::isfinite(a)) {
      if (rep.finite) rep.nonfinite_at = std::string(name) + "[" + std::to_string(i) + "]";
      rep.finite = false;
      continue;
    }
    const double err = coordinate_error(a, numeric);
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst = std::string(name) + "[" + std::to_string(i) + "]";
    }
  }
}

void finish(GradcheckReport& rep, double tolerance) {
  rep.tolerance = tolerance;
  rep.passed = rep.finite && rep.max_rel_error <= tolerance;
}

GradcheckReport gradcheck_linear(std::mt19937_64& rng, double step, double tolerance) {
  const Index T = uniform_index(rng, 1, 6), in = uniform_index(rng, 1, 6), out = uniform_index(rng, 1, 6);
  DenseArray<double> x = uniform({T, in}, rng);
  DenseArray<double> w = uniform({in, out}, rng);
  DenseArray<double> b = uniform({out}, rng);
  const DenseArray<double> g = uniform({T, out}, rng);

  // d<g, xW + b>: dx = g Wᵀ, dW = xᵀ g, db = Σ_t g_t.
  DenseArray<double> gx({T, in}), gw({in, out}), gb({out});
  gx.matrix() = g.matrix() * w.matrix().transpose();
  gw.matrix() = x.matrix().transpose() * g.matrix();
  gb.matrix() = g.matrix().colwise().sum();

  const auto f = [&] { return loss(g, linear(x, w, b)); };
  GradcheckReport rep;
  rep.op = "linear";
  check_tensor(rep, "x", x, gx, f, step);
  check_tensor(rep, "w", w, gw, f, step);
  check_tensor(rep, "b", b, gb, f, step);
  finish(rep, tolerance);
  return rep;
}

}  // namespace

GradcheckReport gradcheck_scan(const ScanInstance<double>& inst, double step, double tolerance, double backward_sign) {
  DiscreteScanInputs<double> in = inst.in;
  const ScanGradients<double> g = selective_scan_backward(in, inst.grad_y, Index{4}, backward_sign);
  const auto f = [&] {
    try {
      return loss(inst.grad_y, selective_scan_seq(in));
    } catch (const NumericError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  GradcheckReport rep;
  rep.op = backward_sign == 1.0 ? "scan" : "scan-corrupt";
  check_tensor(rep, "x", in.x, g.x, f, step);
  check_tensor(rep, "a_bar", in.a_bar, g.a_bar, f, step);
  check_tensor(rep, "b_bar", in.b_bar, g.b_bar, f, step);
  check_tensor(rep, "c", in.c, g.c, f, step);
  check_tensor(rep, "d_skip", in.d_skip, g.d_skip, f, step);
  finish(rep, tolerance);
  return rep;
}

GradcheckReport gradcheck(std::string_view op, std::uint64_t seed, double step, double tolerance) {
  if (!(step > 0)) throw DomainError("gradcheck: step must be positive");
  std::mt19937_64 rng(seed);
  if (op == "linear") return gradcheck_linear(rng, step, tolerance);
  if (op == "scan" || op == "scan-corrupt") {
    const Index L = uniform_index(rng, 1, 16), D = uniform_index(rng, 1, 4), N = uniform_index(rng, 1, 4);
    return gradcheck_scan(random_scan_instance(rng, L, D, N), step, tolerance, op == "scan" ? 1.0 : -1.0);
  }
  throw ConfigError("gradcheck: unknown op '" + std::string(op) + "' (expected linear, scan, scan-corrupt)");
}

ScanCheckReport scan_check(std::uint64_t seed, Index cases, Index max_len) {
  if (cases < 0 || max_len < 1) throw ConfigError("scan_check: need cases >= 0 and max_len >= 1");
  std::mt19937_64 rng(seed);
  ScanCheckReport rep;
  const auto fail = [&rep](Index k, const std::string& what) {
    ++rep.failures;
    rep.messages.push_back("case " + std::to_string(k) + ": " + what);
  };

  for (Index k = 0; k < cases; ++k) {
    ++rep.cases;
    const Index L = uniform_index(rng, 1, max_len), D = uniform_index(rng, 1, 8), N = uniform_index(rng, 1, 8);

    // Chunked against sequential.
    const ScanInstance<double> inst = random_scan_instance(rng, L, D, N);
    const DenseArray<double> y = selective_scan_seq(inst.in);
    const Index chunk = uniform_index(rng, 1, L);
    const double err = rel_error_inf(selective_scan_chunked(inst.in, chunk), y);
    rep.max_chunk_rel_error = std::max(rep.max_chunk_rel_error, err);
    if (!(err <= 1e-10)) fail(k, "chunk " + std::to_string(chunk) + " rel error " + std::to_string(err));
    if (!(selective_scan_chunked(inst.in, 1) == y) || !(selective_scan_chunked(inst.in, L) == y)) {
      fail(k, "chunk 1 or chunk L differs bitwise from sequential");
    }

    // Fused against materialised.
    const SelectiveSsmParams<double> params = random_ssm_params(rng, D, N, SsmDims::default_dt_rank(D));
    const DenseArray<double> x = uniform({L, D}, rng);
    for (Discretization mode : {Discretization::Taylor, Discretization::Zoh}) {
      const double e = rel_error_inf(selective_scan(x, params, mode), selective_scan_seq(make_scan_inputs(x, params, mode)));
      if (!(e <= 1e-12)) fail(k, "fused vs materialised rel error " + std::to_string(e));
    }

    // Directional flatten roundtrip and reversal involution.
    const Index H = uniform_index(rng, 1, 6), W = uniform_index(rng, 1, 6), C = uniform_index(rng, 1, 3);
    const FeatureMap<double> f = uniform({H, W, C}, rng);
    for (ScanDirection dir : kScanDirections) {
      const DenseArray<double> s = flatten_direction(f, dir);
      if (!(unflatten_direction(s, dir, H, W) == f)) fail(k, "roundtrip " + std::string(to_string(dir)));
      if (!(flatten_direction(f, reversed(dir)) == reverse_sequence(s))) {
        fail(k, "reversal " + std::string(to_string(dir)));
      }
    }

    // Cross scan with equal C reduces to two independent scans.
    SelectiveSsmParams<double> other = random_ssm_params(rng, D, N, SsmDims::default_dt_rank(D));
    other.proj.w_c = params.proj.w_c;
    const SequencePair<double> cross = cross_selective_scan(x, x, params, other, CrossExchangeMode::C);
    if (rel_error_inf(cross.rgb, selective_scan(x, params)) > 1e-12 ||
        rel_error_inf(cross.x, selective_scan(x, other)) > 1e-12) {
      fail(k, "mode C cross scan with equal C differs from independent scans");
    }

    // Concat-scan plumbing.
    const DenseArray<double> x2 = uniform({L, D}, rng);
    const SequencePair<double> halves = separate(concat_length(x, x2));
    if (!(halves.rgb == x) || !(halves.x == x2)) fail(k, "separate(concat) roundtrip");
  }
  return rep;
}

namespace {

template <class F>
double median_ms(int repeats, F&& f) {
  std::vector<double> times;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t m = times.size() / 2;
  return times.size() % 2 ? times[m] : 0.5 * (times[m - 1] + times[m]);
}

/// softmax(x xᵀ / sqrt(D)) x with explicit loops.
DenseArray<double> naive_attention(const DenseArray<double>& x) {
  const Index L = x.dim(0), D = x.dim(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  DenseArray<double> out({L, D});
  std::vector<double> row(static_cast<std::size_t>(L));
  for (Index i = 0; i < L; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < L; ++j) {
      double s = 0;
      for (Index d = 0; d < D; ++d) s += x(i, d) * x(j, d);
      row[static_cast<std::size_t>(j)] = s * scale;
      mx = std::max(mx, s * scale);
    }
    double z = 0;
    for (double& v : row) z += (v = std::exp(v - mx));
    for (Index j = 0; j < L; ++j) {
      const double p = row[static_cast<std::size_t>(j)] / z;
      for (Index d = 0; d < D; ++d) out(i, d) += p * x(j, d);
    }
  }
  return out;
}

volatile double g_sink = 0;

}  // namespace

std::vector<BenchRow> bench_scan(const std::vector<Index>& lengths, const BenchOptions& opt) {
  if (opt.repeats < 1) throw ConfigError("bench_scan: repeats must be >= 1");
  std::mt19937_64 rng(12345);
  std::vector<BenchRow> rows;
  for (Index L : lengths) {
    if (L < 1) throw ConfigError("bench_scan: lengths must be positive");
    const ScanInstance<double> inst = random_scan_instance(rng, L, opt.channels, opt.state);
    g_sink = g_sink + selective_scan_seq(inst.in)[0];  // warm-up
    BenchRow row;
    row.length = L;
    row.seq_ms = median_ms(opt.repeats, [&] { g_sink = g_sink + selective_scan_seq(inst.in)[0]; });
    row.chunked_ms =
        median_ms(opt.repeats, [&] { g_sink = g_sink + selective_scan_chunked(inst.in, opt.chunk)[0]; });
    if (L <= opt.attention_max_len) {
      row.attention_ms = median_ms(opt.repeats, [&] { g_sink = g_sink + naive_attention(inst.in.x)[0]; });
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace sigma
