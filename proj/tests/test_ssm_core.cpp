#include <cmath>
#include <functional>

#include "doctest.h"
#include "oracles.hpp"
#include "sigma/analysis.hpp"
#include "sigma/ssm.hpp"

using namespace sigma;
using oracle::Arr;

namespace {

DiscreteScanInputs<double> random_inputs(std::mt19937_64& rng, Index L, Index D, Index N) {
  return {oracle::random({L, D, N}, rng, 0.2, 0.95), oracle::random({L, D, N}, rng), oracle::random({L, N}, rng),
          oracle::random({D}, rng), oracle::random({L, D}, rng)};
}

oracle::Discrete as_oracle(const DiscreteScanInputs<double>& in) {
  return {in.a_bar, in.b_bar, in.c, in.d_skip, in.x};
}

double dot(const Arr& a, const Arr& b) { return (a.array() * b.array()).sum(); }

}  // namespace

TEST_CASE("derive_selection") {
  std::mt19937_64 rng(11);
  const Index L = 5, D = 6, N = 3, R = 2;
  SUBCASE("zero input with zero bias gives delta = ln 2") {
    SelectiveSsmParams<double> p = random_ssm_params(rng, D, N, R);
    p.proj.dt_bias = Arr({D});
    const Selection<double> s = derive_selection(Arr({L, D}), p.proj);
    CHECK(max_abs(s.b) == 0.0);
    CHECK(max_abs(s.c) == 0.0);
    for (Index i = 0; i < s.delta.size(); ++i) CHECK(s.delta[i] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("identity embedding selects the leading columns") {
    SelectiveSsmParams<double> p = random_ssm_params(rng, D, N, R);
    p.proj.w_b = Arr({D, N});
    for (Index n = 0; n < N; ++n) p.proj.w_b(n, n) = 1;
    const Arr x = oracle::random({L, D}, rng);
    const Selection<double> s = derive_selection(x, p.proj);
    for (Index l = 0; l < L; ++l)
      for (Index n = 0; n < N; ++n) CHECK(s.b(l, n) == x(l, n));
  }
  SUBCASE("random input against matmul and softplus") {
    const SelectiveSsmParams<double> p = random_ssm_params(rng, D, N, R);
    const Arr x = oracle::random({L, D}, rng);
    const Selection<double> s = derive_selection(x, p.proj);
    const oracle::Sel ref = oracle::selection(x, oracle::ssm_of(p));
    CHECK(rel_error_inf(s.b, ref.b) <= 1e-14);
    CHECK(rel_error_inf(s.c, ref.c) <= 1e-14);
    CHECK(rel_error_inf(s.delta, ref.delta) <= 1e-13);
    for (Index i = 0; i < s.delta.size(); ++i) CHECK(s.delta[i] > 0);
  }
  SUBCASE("non-finite input reports its index") {
    const SelectiveSsmParams<double> p = random_ssm_params(rng, D, N, R);
    Arr x({L, D});
    x(2, 3) = std::nan("");
    try {
      derive_selection(x, p.proj);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(e.index() == 2 * D + 3);
    }
  }
}

TEST_CASE("discretize_zoh") {
  const Arr a = Arr::from({1, 1}, {-1.0}), b = Arr::from({1, 1}, {1.0});
  SUBCASE("closed-form scalar") {
    const auto sys = discretize_zoh(a, b, Arr::from({1, 1}, {0.1}));
    // e^{-0.1} and 1 - e^{-0.1} to 16 digits.
    CHECK(sys.a_bar[0] == doctest::Approx(0.9048374180359595).epsilon(1e-15));
    CHECK(sys.b_bar[0] == doctest::Approx(0.09516258196404048).epsilon(1e-14));
  }
  SUBCASE("ln 2 step halves the state") {
    const auto sys = discretize_zoh(a, b, Arr::from({1, 1}, {std::log(2.0)}));
    CHECK(sys.a_bar[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sys.b_bar[0] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("zero-step limit") {
    const auto sys = discretize_zoh(a, b, Arr::from({1, 1}, {1e-12}));
    CHECK(std::abs(sys.a_bar[0] - 1) <= 1e-11);
    CHECK(std::abs(sys.b_bar[0]) <= 1e-11);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(discretize_zoh(Arr::from({1, 1}, {0.0}), b, Arr::from({1, 1}, {0.1})), StabilityError);
    CHECK_THROWS_AS(discretize_zoh(a, b, Arr::from({1, 1}, {0.0})), DomainError);
    CHECK_THROWS_AS(discretize_zoh(a, b, Arr::from({1, 1}, {-0.5})), DomainError);
    CHECK_THROWS_AS(discretize_zoh(a, Arr({2, 1}), Arr::from({1, 1}, {0.1})), DimensionError);
  }
}

TEST_CASE("discretize_taylor") {
  CHECK(discretize_taylor(Arr::from({1, 1}, {1.0}), Arr::from({1, 1}, {0.1}))[0] == 0.1);
  CHECK(discretize_taylor(Arr::from({1, 1}, {-2.5}), Arr::from({1, 1}, {1.0}))[0] == -2.5);
  CHECK_THROWS_AS(discretize_taylor(Arr::from({1, 1}, {1.0}), Arr::from({1, 1}, {0.0})), DomainError);

  SUBCASE("local error against ZOH is second order") {
    const Arr a = Arr::from({1, 1}, {-1.0}), b = Arr::from({1, 1}, {1.0});
    std::vector<double> errs;
    for (double dt : {0.1, 0.05, 0.025, 0.0125}) {
      const Arr delta = Arr::from({1, 1}, {dt});
      errs.push_back(std::abs(discretize_zoh(a, b, delta).b_bar[0] - discretize_taylor(b, delta)[0]));
    }
    for (std::size_t i = 1; i < errs.size(); ++i) {
      CHECK(errs[i - 1] / errs[i] == doctest::Approx(4.0).epsilon(0.06));
      CHECK(std::log2(errs[i - 1] / errs[i]) >= 1.9);
    }
  }
}

TEST_CASE("selective_scan_seq") {
  std::mt19937_64 rng(12);
  SUBCASE("cumulative sum") {
    const DiscreteScanInputs<double> in{Arr::constant({3, 1, 1}, 1.0), Arr::constant({3, 1, 1}, 1.0),
                                        Arr::constant({3, 1}, 1.0), Arr({1}), Arr::from({3, 1}, {1, 2, 3})};
    CHECK(selective_scan_seq(in) == Arr::from({3, 1}, {1, 3, 6}));
  }
  SUBCASE("memoryless when the transition is zero") {
    DiscreteScanInputs<double> in = random_inputs(rng, 6, 3, 4);
    in.a_bar = Arr(in.a_bar.shape());
    const Arr y = selective_scan_seq(in);
    for (Index l = 0; l < 6; ++l)
      for (Index d = 0; d < 3; ++d) {
        double cb = 0;
        for (Index n = 0; n < 4; ++n) cb += in.c(l, n) * in.b_bar(l, d, n);
        CHECK(y(l, d) == doctest::Approx(cb * in.x(l, d) + in.d_skip[d] * in.x(l, d)).epsilon(1e-14));
      }
  }
  SUBCASE("random instance against the lane-by-lane recurrence") {
    const DiscreteScanInputs<double> in = random_inputs(rng, 16, 3, 4);
    CHECK(max_rel_diff(selective_scan_seq(in), oracle::recurrence(as_oracle(in)), 1e-300) <= 1e-12);
  }
  SUBCASE("non-finite intermediate reports the first failing position") {
    DiscreteScanInputs<double> in = random_inputs(rng, 5, 2, 2);
    in.b_bar(3, 1, 0) = std::numeric_limits<double>::infinity();
    try {
      selective_scan_seq(in);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(e.index() == 3 * 2 + 1);
    }
  }
  SUBCASE("shape mismatch") {
    DiscreteScanInputs<double> in = random_inputs(rng, 5, 2, 2);
    in.c = Arr({4, 2});
    CHECK_THROWS_AS(selective_scan_seq(in), DimensionError);
  }
}

TEST_CASE("selective_scan_chunked") {
  std::mt19937_64 rng(13);
  SUBCASE("chunk 1 and chunk L reproduce the sequential bits") {
    for (int rep = 0; rep < 20; ++rep) {
      const Index L = oracle::rand_int(rng, 1, 40);
      const DiscreteScanInputs<double> in =
          random_inputs(rng, L, oracle::rand_int(rng, 1, 5), oracle::rand_int(rng, 1, 5));
      const Arr seq = selective_scan_seq(in);
      CHECK(selective_scan_chunked(in, 1) == seq);
      CHECK(selective_scan_chunked(in, L) == seq);
      CHECK(selective_scan_chunked(in, L + 7) == seq);
    }
  }
  SUBCASE("small chunks agree with the sequential scan") {
    const DiscreteScanInputs<double> in = random_inputs(rng, 37, 4, 3);
    const Arr seq = selective_scan_seq(in);
    for (Index chunk : {2, 3, 5, 7}) CHECK(max_rel_diff(selective_scan_chunked(in, chunk), seq, 1e-300) <= 1e-10);
  }
  SUBCASE("every chunk size on random instances") {
    for (int rep = 0; rep < 30; ++rep) {
      const Index L = oracle::rand_int(rng, 1, 64);
      const DiscreteScanInputs<double> in =
          random_inputs(rng, L, oracle::rand_int(rng, 1, 8), oracle::rand_int(rng, 1, 8));
      const Arr seq = selective_scan_seq(in);
      for (Index chunk = 1; chunk <= L; ++chunk) {
        CHECK(rel_error_inf(selective_scan_chunked(in, chunk), seq) <= 1e-10);
      }
    }
  }
  SUBCASE("chunk must be positive") {
    CHECK_THROWS_AS(selective_scan_chunked(random_inputs(rng, 4, 1, 1), 0), ConfigError);
  }
}

TEST_CASE("fused scan matches the materialised pipeline") {
  std::mt19937_64 rng(14);
  const Index L = 12, D = 5, N = 3;
  const SelectiveSsmParams<double> p = random_ssm_params(rng, D, N, 2);
  const Arr x = oracle::random({L, D}, rng);
  for (Discretization mode : {Discretization::Taylor, Discretization::Zoh}) {
    const Arr fused = selective_scan(x, p, mode);
    CHECK(rel_error_inf(fused, selective_scan_seq(make_scan_inputs(x, p, mode))) <= 1e-12);
    CHECK(rel_error_inf(fused, oracle::selective(x, oracle::ssm_of(p), mode == Discretization::Zoh)) <= 1e-12);
  }
  Selection<double> sel = derive_selection(x, p.proj);
  Arr a_pos = p.ssm.state_matrix();
  a_pos[1] = 0.5;
  CHECK_THROWS_AS(selective_scan(x, sel, a_pos, p.ssm.d_skip), StabilityError);
  sel.delta(0, 0) = 0;
  CHECK_THROWS_AS(selective_scan(x, sel, p.ssm.state_matrix(), p.ssm.d_skip), DomainError);
}

TEST_CASE("selective_scan_backward") {
  std::mt19937_64 rng(15);
  SUBCASE("zero upstream gradient") {
    const DiscreteScanInputs<double> in = random_inputs(rng, 9, 2, 3);
    const ScanGradients<double> g = selective_scan_backward(in, Arr({9, 2}));
    for (const Arr* t : {&g.x, &g.a_bar, &g.b_bar, &g.c, &g.d_skip}) CHECK(max_abs(*t) == 0.0);
  }
  SUBCASE("single step chain rule") {
    const DiscreteScanInputs<double> in = random_inputs(rng, 1, 1, 1);
    const Arr gy = Arr::from({1, 1}, {0.7});
    const ScanGradients<double> g = selective_scan_backward(in, gy);
    const double expect = (in.c[0] * in.b_bar[0] + in.d_skip[0]) * 0.7;
    CHECK(g.x[0] == doctest::Approx(expect).epsilon(1e-15));
    CHECK(g.a_bar[0] == 0.0);  // h_0 = 0
    CHECK(g.c[0] == doctest::Approx(0.7 * in.b_bar[0] * in.x[0]).epsilon(1e-15));
  }
  SUBCASE("central differences on every coordinate") {
    const Index L = 8, D = 2, N = 3;
    const DiscreteScanInputs<double> in = random_inputs(rng, L, D, N);
    const Arr gy = oracle::random({L, D}, rng);
    const double h = 1e-5;
    for (Index checkpoint : {1, 3, 16}) {
      const ScanGradients<double> g = selective_scan_backward(in, gy, checkpoint);
      const auto check_tensor = [&](Arr oracle::Discrete::*member, const Arr& analytic) {
        double worst = 0;
        for (Index i = 0; i < analytic.size(); ++i) {
          oracle::Discrete plus = as_oracle(in), minus = as_oracle(in);
          (plus.*member)[i] += h;
          (minus.*member)[i] -= h;
          const double fd = (dot(gy, oracle::recurrence(plus)) - dot(gy, oracle::recurrence(minus))) / (2 * h);
          worst = std::max(worst, std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-6}));
        }
        return worst;
      };
      CHECK(check_tensor(&oracle::Discrete::x, g.x) <= 1e-4);
      CHECK(check_tensor(&oracle::Discrete::a_bar, g.a_bar) <= 1e-4);
      CHECK(check_tensor(&oracle::Discrete::b_bar, g.b_bar) <= 1e-4);
      CHECK(check_tensor(&oracle::Discrete::c, g.c) <= 1e-4);
      CHECK(check_tensor(&oracle::Discrete::d, g.d_skip) <= 1e-4);
    }
  }
  SUBCASE("checkpoint interval does not change the result") {
    const DiscreteScanInputs<double> in = random_inputs(rng, 23, 3, 2);
    const Arr gy = oracle::random({23, 3}, rng);
    const ScanGradients<double> ref = selective_scan_backward(in, gy, 23);
    for (Index k : {1, 2, 5, 16}) {
      const ScanGradients<double> g = selective_scan_backward(in, gy, k);
      CHECK(g.x == ref.x);
      CHECK(g.a_bar == ref.a_bar);
      CHECK(g.c == ref.c);
    }
  }
  SUBCASE("adjoint identity") {
    const Index L = 30, D = 4, N = 3;
    const DiscreteScanInputs<double> in = random_inputs(rng, L, D, N);
    const Arr gy = oracle::random({L, D}, rng), v = oracle::random({L, D}, rng);
    const double eps = 1e-6;
    DiscreteScanInputs<double> moved = in;
    moved.x = in.x + eps * v;
    const double lhs = dot(gy, selective_scan_seq(moved)) - dot(gy, selective_scan_seq(in));
    const double rhs = eps * dot(selective_scan_backward(in, gy).x, v);
    CHECK(std::abs(lhs - rhs) / std::abs(rhs) <= 1e-4);
  }
  SUBCASE("shape mismatch") {
    const DiscreteScanInputs<double> in = random_inputs(rng, 4, 2, 2);
    CHECK_THROWS_AS(selective_scan_backward(in, Arr({4, 3})), DimensionError);
  }
}

TEST_CASE("scan properties") {
  std::mt19937_64 rng(16);
  SUBCASE("bounded over a long sequence") {
    const Index L = 4096, D = 4, N = 4;
    const SelectiveSsmParams<double> p = random_ssm_params(rng, D, N, 1);
    const Arr x = oracle::random({L, D}, rng);
    const DiscreteScanInputs<double> in = make_scan_inputs(x, p);
    double a_max = 0, bx_max = 0, c_max = 0, dx_max = 0;
    for (Index l = 0; l < L; ++l)
      for (Index d = 0; d < D; ++d) {
        dx_max = std::max(dx_max, std::abs(in.d_skip[d] * x(l, d)));
        for (Index n = 0; n < N; ++n) {
          a_max = std::max(a_max, in.a_bar(l, d, n));
          bx_max = std::max(bx_max, std::abs(in.b_bar(l, d, n) * x(l, d)));
        }
      }
    for (Index i = 0; i < in.c.size(); ++i) c_max = std::max(c_max, std::abs(in.c[i]));
    REQUIRE(a_max < 1.0);
    const double bound = double(N) * c_max * bx_max / (1 - a_max) + dx_max;
    const Arr y = selective_scan_seq(in);
    CHECK(y.all_finite());
    CHECK(max_abs(y) <= bound);
    // The second half is no larger than the first: no growth.
    double first = 0, second = 0;
    for (Index l = 0; l < L; ++l) {
      double& half = l < L / 2 ? first : second;
      for (Index d = 0; d < D; ++d) half = std::max(half, std::abs(y(l, d)));
    }
    CHECK(second <= 2 * first);
  }
  SUBCASE("linear in x with the discrete system held fixed") {
    const DiscreteScanInputs<double> in = random_inputs(rng, 20, 3, 4);
    for (double a : {-2.5, 0.3, 7.0}) {
      DiscreteScanInputs<double> scaled = in;
      scaled.x = a * in.x;
      CHECK(max_rel_diff(selective_scan_seq(scaled), a * selective_scan_seq(in), 1e-12) <= 1e-9);
    }
  }
  SUBCASE("f32 path tracks f64") {
    const Index L = 64, D = 6, N = 4;
    const SelectiveSsmParams<double> p = random_ssm_params(rng, D, N, 1);
    const Arr x = oracle::random({L, D}, rng);
    SelectiveSsmParams<float> pf{{p.ssm.a_log.cast<float>(), p.ssm.d_skip.cast<float>()},
                                 {p.proj.w_b.cast<float>(), p.proj.w_c.cast<float>(), p.proj.w_dt_down.cast<float>(),
                                  p.proj.w_dt_up.cast<float>(), p.proj.dt_bias.cast<float>()}};
    const Arr y64 = selective_scan(x, p);
    const Arr y32 = selective_scan(x.cast<float>(), pf).cast<double>();
    CHECK(rel_error_inf(y32, y64) <= 1e-3);
  }
}
