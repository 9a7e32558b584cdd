#pragma once

// SS2D: four directional traversals of an [H, W, C] map, one selective scan
// per direction, mapped back to the grid and summed.

#include <array>
#include <string_view>

#include "sigma/ssm.hpp"

namespace sigma {

/// Raster traversals (cross-scan convention): row-major, column-major, and
/// their element-order reversals.
enum class ScanDirection { RowMajor = 0, ColMajor = 1, RowMajorReversed = 2, ColMajorReversed = 3 };

inline constexpr std::array<ScanDirection, 4> kScanDirections = {
    ScanDirection::RowMajor, ScanDirection::ColMajor, ScanDirection::RowMajorReversed,
    ScanDirection::ColMajorReversed};

inline ScanDirection reversed(ScanDirection d) {
  switch (d) {
    case ScanDirection::RowMajor: return ScanDirection::RowMajorReversed;
    case ScanDirection::ColMajor: return ScanDirection::ColMajorReversed;
    case ScanDirection::RowMajorReversed: return ScanDirection::RowMajor;
    case ScanDirection::ColMajorReversed: return ScanDirection::ColMajor;
  }
  return d;
}

inline std::string_view to_string(ScanDirection d) {
  switch (d) {
    case ScanDirection::RowMajor: return "row_major";
    case ScanDirection::ColMajor: return "col_major";
    case ScanDirection::RowMajorReversed: return "row_major_reversed";
    case ScanDirection::ColMajorReversed: return "col_major_reversed";
  }
  return "?";
}

/// Grid cell (row-major flat index) visited at sequence position `t`.
inline Index direction_source(ScanDirection dir, Index t, Index H, Index W) {
  const Index n = H * W;
  const bool rev = dir == ScanDirection::RowMajorReversed || dir == ScanDirection::ColMajorReversed;
  const Index s = rev ? n - 1 - t : t;
  if (dir == ScanDirection::RowMajor || dir == ScanDirection::RowMajorReversed) return s;
  const Index j = s / H, i = s % H;  // column-major: walk down each column
  return i * W + j;
}

template <typename S>
DenseArray<S> flatten_direction(const FeatureMap<S>& f, ScanDirection dir) {
  require_rank(f.shape(), 3, "flatten_direction");
  const Index H = f.dim(0), W = f.dim(1), C = f.dim(2);
  if (H < 1 || W < 1) throw DimensionError("flatten_direction: empty spatial extent");
  DenseArray<S> seq({H * W, C});
  auto out = seq.matrix();
  auto in = f.reshaped({H * W, C});
  const auto src = in.matrix();
  for (Index t = 0; t < H * W; ++t) out.row(t) = src.row(direction_source(dir, t, H, W));
  return seq;
}

template <typename S>
FeatureMap<S> unflatten_direction(const DenseArray<S>& seq, ScanDirection dir, Index H, Index W) {
  require_rank(seq.shape(), 2, "unflatten_direction");
  if (seq.dim(0) != H * W) {
    throw DimensionError("unflatten_direction: sequence length " + std::to_string(seq.dim(0)) + " vs " +
                         std::to_string(H) + "x" + std::to_string(W));
  }
  const Index C = seq.dim(1);
  DenseArray<S> flat({H * W, C});
  auto out = flat.matrix();
  const auto in = seq.matrix();
  for (Index t = 0; t < H * W; ++t) out.row(direction_source(dir, t, H, W)) = in.row(t);
  return flat.reshaped({H, W, C});
}

/// One independent parameter set per direction, in kScanDirections order.
template <typename S>
struct DirectionalParams {
  std::array<SelectiveSsmParams<S>, 4> dirs;

  template <class V>
  void visit(V& v, const SsmDims& d) {
    for (std::size_t k = 0; k < dirs.size(); ++k) {
      ParamScope scope(v, "dir", k);
      dirs[k].visit(v, d);
    }
  }
};

template <typename S>
FeatureMap<S> ss2d(const FeatureMap<S>& f, const DirectionalParams<S>& params,
                   Discretization mode = Discretization::Taylor) {
  require_rank(f.shape(), 3, "ss2d");
  const Index H = f.dim(0), W = f.dim(1);
  FeatureMap<S> out(f.shape());
  for (std::size_t k = 0; k < kScanDirections.size(); ++k) {
    const ScanDirection dir = kScanDirections[k];
    const DenseArray<S> y = selective_scan(flatten_direction(f, dir), params.dirs[k], mode);
    out += unflatten_direction(y, dir, H, W);
  }
  return out;
}

}  // namespace sigma
