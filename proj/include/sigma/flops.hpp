#pragma once

// Analytic FLOP model of the forward graph.
//
// Counting convention:
//   - one multiply-accumulate = 1 FLOP (a [M,K]x[K,N] product costs M*K*N),
//   - a standalone multiply, divide, exp, softplus, sigmoid or rsqrt = 1 FLOP per element,
//   - additions, comparisons, max and data movement are free,
//   - depthwise convolution counts the full k*k window at every output position.
// Under this convention the recurrence costs 5 FLOPs per (step, channel, state):
// Δ·A and its exp, (Δx)·B, the Ā·h multiply-accumulate and the C·h accumulate,
// plus 2 per (step, channel) for Δ·x and the D·x skip.

#include <string>
#include <string_view>
#include <vector>

#include "sigma/config.hpp"

namespace sigma {

struct FlopTerm {
  std::string name;
  double flops = 0;
};

class FlopReport {
 public:
  void add(std::string name, double flops);
  /// Append every term of `other`, prefixing its names with `prefix.`.
  void merge(const FlopReport& other, std::string_view prefix);
  void scale(double factor);

  double total() const;
  /// Sum of terms whose name contains `needle`.
  double total_matching(std::string_view needle) const;
  double gflops() const { return total() / 1e9; }
  const std::vector<FlopTerm>& terms() const { return terms_; }

 private:
  std::vector<FlopTerm> terms_;
};

namespace flops {

inline constexpr double kScanPerState = 5;
inline constexpr double kScanPerChannel = 2;

double linear(double tokens, double in, double out);
double depthwise_conv(double tokens, double channels, double kernel = 3);
double layer_norm(double tokens, double channels);

/// B, C, Δ derivation for a length-L sequence of width D.
FlopReport selection(double length, double channels, double state, double dt_rank);
/// The recurrence itself.
FlopReport scan(double length, double channels, double state);
/// selection + scan.
FlopReport selective_scan(double length, double channels, double state, double dt_rank);

/// One mixer (VSSB residual branch, or one CroMB branch) on an H x W x C map.
FlopReport mixer(double height, double width, double channels, double state);
FlopReport vssb(double height, double width, double channels, double state);
FlopReport cavssb(double height, double width, double channels, double state);
FlopReport cromb(double height, double width, double channels, double state);
/// ConMB on a pair of H x W x C maps (concatenated length 2HW).
FlopReport conmb(double height, double width, double channels, double state);
/// ConSA on a pair of H x W x C maps.
FlopReport consa(double height, double width, double channels);

FlopReport stem(double height, double width, double out_channels);
FlopReport downsample(double height, double width, double channels);

/// Whole model at input resolution H x W (both encoder branches included).
FlopReport model(const SigmaConfig& cfg, Index height, Index width);

}  // namespace flops
}  // namespace sigma
