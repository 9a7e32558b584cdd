#include "doctest.h"
#include "oracles.hpp"
#include "sigma/blocks.hpp"

using namespace sigma;
using oracle::Arr;

namespace {

Arr vssb_oracle(const Arr& f, const VssbWeights<double>& w) {
  const oracle::MixerIn in = oracle::mixer_in(f, w);
  return oracle::add(f, oracle::matmul(oracle::hadamard(oracle::ss2d(in.u, w.ssm.dirs), in.gate), w.w_out));
}

/// Patch p x p gather by explicit coordinates, features ordered (row, column, channel).
Arr gather_oracle(const Arr& x, Index p) {
  const Index H = x.dim(0), W = x.dim(1), C = x.dim(2);
  Arr out({H / p, W / p, p * p * C});
  for (Index i = 0; i < H; ++i)
    for (Index j = 0; j < W; ++j)
      for (Index c = 0; c < C; ++c) out(i / p, j / p, ((i % p) * p + (j % p)) * C + c) = x(i, j, c);
  return out;
}

}  // namespace

TEST_CASE("vssb") {
  std::mt19937_64 rng(41);
  SUBCASE("zero output projection leaves a pure residual") {
    auto w = oracle::lively_weights<VssbWeights<double>>(MixerDims{6, 4}, 1);
    w.w_out = Arr(w.w_out.shape());
    const Arr f = oracle::random({3, 4, 6}, rng);
    CHECK(vssb(f, w) == f);
  }
  SUBCASE("1x1 input against the scalar pipeline") {
    const auto w = oracle::lively_weights<VssbWeights<double>>(MixerDims{6, 4}, 2);
    const Arr f = oracle::random({1, 1, 6}, rng);
    CHECK(rel_error_inf(vssb(f, w) - f, vssb_oracle(f, w) - f) <= 1e-12);
  }
  SUBCASE("random map against the pipeline of oracles") {
    const auto w = oracle::lively_weights<VssbWeights<double>>(MixerDims{4, 3}, 3);
    const Arr f = oracle::random({3, 5, 4}, rng);
    CHECK(rel_error_inf(vssb(f, w) - f, vssb_oracle(f, w) - f) <= 1e-11);
  }
  SUBCASE("shape of an 8x8x96 map") {
    const auto w = random_weights<VssbWeights<double>>(MixerDims{96, 4}, 4);
    const Arr out = vssb(oracle::random({8, 8, 96}, rng), w);
    CHECK(out.shape() == Shape{8, 8, 96});
    CHECK(out.all_finite());
  }
  SUBCASE("channel mismatch") {
    const auto w = random_weights<VssbWeights<double>>(MixerDims{4, 2}, 5);
    CHECK_THROWS_AS(vssb(Arr({2, 2, 5}), w), DimensionError);
  }
}

TEST_CASE("cavssb") {
  std::mt19937_64 rng(42);
  const auto w = oracle::lively_weights<CavssbWeights<double>>(CavssbDims{MixerDims{8, 4}}, 6);
  const Arr f = oracle::random({4, 3, 8}, rng);
  const Arr f1 = f + vssb_core(f, w.mixer);
  SUBCASE("zero attention weights give a = 1/2") {
    CavssbWeights<double> z = w;
    z.ca_w1 = Arr(z.ca_w1.shape());
    z.ca_w2 = Arr(z.ca_w2.shape());
    CHECK(channel_attention(f1, z.ca_w1, z.ca_w2) == Arr::constant({8}, 0.5));
    CHECK(cavssb(f, z) == 1.5 * f1);
  }
  SUBCASE("constant channels pool identically") {
    Arr c({3, 3, 4});
    for (Index i = 0; i < c.size(); ++i) c[i] = double(i % 4) - 1.5;
    CHECK(global_pool(c, PoolMode::Avg) == global_pool(c, PoolMode::Max));
  }
  SUBCASE("attention lies strictly inside (0, 1) and scales F1") {
    const Arr a = channel_attention(f1, w.ca_w1, w.ca_w2);
    for (Index c = 0; c < a.size(); ++c) {
      CHECK(a[c] > 0.0);
      CHECK(a[c] < 1.0);
    }
    const Arr out = cavssb(f, w);
    CHECK(out.shape() == f.shape());
    for (Index i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(f1[i] * (1 + a[i % 8])).epsilon(1e-15));
  }
  SUBCASE("attention against an explicit MLP") {
    const Arr avg = global_pool(f1, PoolMode::Avg).reshaped({1, 8});
    const Arr mx = global_pool(f1, PoolMode::Max).reshaped({1, 8});
    const auto mlp = [&](const Arr& v) {
      return oracle::matmul(oracle::map(oracle::matmul(v, w.ca_w1), [](double t) { return t > 0 ? t : 0.0; }), w.ca_w2);
    };
    const Arr ref = oracle::map(oracle::add(mlp(avg), mlp(mx)), oracle::sigmoid).reshaped({8});
    CHECK(rel_error_inf(channel_attention(f1, w.ca_w1, w.ca_w2), ref) <= 1e-14);
  }
}

TEST_CASE("patch_stem") {
  std::mt19937_64 rng(43);
  SUBCASE("4x4 input to a single token") {
    const auto w = random_weights<StemWeights<double>>(StemDims{3, 16}, 1);
    CHECK(patch_stem(oracle::random({4, 4, 3}, rng), w).shape() == Shape{1, 1, 16});
  }
  SUBCASE("constant image with averaging weights gives a constant map") {
    auto w = oracle::lively_weights<StemWeights<double>>(StemDims{3, 8}, 2);
    w.w_embed = Arr::constant({48, 8}, 1.0 / 48);
    const Arr out = patch_stem(Arr::constant({8, 12, 3}, 0.4), w);
    for (Index i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(out[i % 8]).epsilon(1e-14));
  }
  SUBCASE("64x64 input with C1 = 96") {
    const auto w = random_weights<StemWeights<double>>(StemDims{3, 96}, 3);
    CHECK(patch_stem(oracle::random({64, 64, 3}, rng), w).shape() == Shape{16, 16, 96});
  }
  SUBCASE("random image against gather and matmul") {
    const auto w = oracle::lively_weights<StemWeights<double>>(StemDims{3, 8}, 4);
    const Arr img = oracle::random({8, 4, 3}, rng);
    const Arr ref = oracle::layer_norm(oracle::matmul(gather_oracle(img, 4), w.w_embed, &w.b_embed), w.norm_gamma,
                                       w.norm_beta);
    CHECK(rel_error_inf(patch_stem(img, w), ref) <= 1e-13);
  }
  SUBCASE("indivisible extent") {
    const auto w = random_weights<StemWeights<double>>(StemDims{3, 8}, 5);
    CHECK_THROWS_AS(patch_stem(Arr({6, 8, 3}), w), ConfigError);
  }
}

TEST_CASE("downsample") {
  std::mt19937_64 rng(44);
  SUBCASE("16x16x96 to 8x8x192") {
    const auto w = random_weights<DownsampleWeights<double>>(DownsampleDims{96}, 1);
    CHECK(downsample(oracle::random({16, 16, 96}, rng), w).shape() == Shape{8, 8, 192});
  }
  SUBCASE("2x2 constant map to one token") {
    const auto w = oracle::lively_weights<DownsampleWeights<double>>(DownsampleDims{5}, 2);
    CHECK(downsample(Arr::constant({2, 2, 5}, 1.0), w).shape() == Shape{1, 1, 10});
  }
  SUBCASE("gather matches explicit coordinates") {
    const Arr x = oracle::random({6, 4, 3}, rng);
    CHECK(gather_patches(x, Index{2}) == gather_oracle(x, 2));
    CHECK(gather_patches(x, Index{1}) == x);
  }
  SUBCASE("random map against gather, norm and matmul") {
    const auto w = oracle::lively_weights<DownsampleWeights<double>>(DownsampleDims{3}, 3);
    const Arr x = oracle::random({6, 4, 3}, rng);
    const Arr ref = oracle::matmul(oracle::layer_norm(gather_oracle(x, 2), w.norm_gamma, w.norm_beta), w.w_reduce);
    CHECK(rel_error_inf(downsample(x, w), ref) <= 1e-13);
  }
  SUBCASE("odd extent") {
    const auto w = random_weights<DownsampleWeights<double>>(DownsampleDims{3}, 4);
    CHECK_THROWS_AS(downsample(Arr({3, 4, 3}), w), ConfigError);
  }
}

TEST_CASE("stem and three downsamples form the pyramid") {
  std::mt19937_64 rng(45);
  const Index C = 8;
  FeatureMap<double> f = patch_stem(oracle::random({64, 96, 3}, rng), random_weights<StemWeights<double>>(StemDims{3, C}, 1));
  CHECK(f.shape() == Shape{16, 24, C});
  Index channels = C;
  for (Index k = 1; k < 4; ++k) {
    f = downsample(f, random_weights<DownsampleWeights<double>>(DownsampleDims{channels}, std::uint64_t(k)));
    channels *= 2;
    CHECK(f.shape() == Shape{64 >> (k + 2), 96 >> (k + 2), channels});
  }
}
