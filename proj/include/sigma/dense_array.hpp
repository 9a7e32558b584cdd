#pragma once

// Rank-N row-major dense array, the value type carried between every stage of
// the network. Two-dimensional views are exposed as Eigen maps so projections
// go straight through Eigen's GEMM.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sigma/errors.hpp"

namespace sigma {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
class DenseArray {
 public:
  using value_type = Scalar;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
  using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

  /// Empty array of shape [0].
  DenseArray() : shape_{0} {}

  /// Zero-filled array of the given shape.
  explicit DenseArray(Shape shape) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), Scalar(0));
  }

  DenseArray(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (static_cast<Index>(data_.size()) != shape_numel(shape_)) {
      throw DimensionError("DenseArray: data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static DenseArray zeros(Shape shape) { return DenseArray(std::move(shape)); }

  static DenseArray constant(Shape shape, Scalar value) {
    DenseArray out(std::move(shape));
    std::fill(out.data_.begin(), out.data_.end(), value);
    return out;
  }

  static DenseArray from(Shape shape, std::initializer_list<Scalar> values) {
    return DenseArray(std::move(shape), std::vector<Scalar>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index size() const noexcept { return static_cast<Index>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  /// Extent of axis `axis`; negative values count from the end.
  Index dim(Index axis) const {
    const Index r = rank();
    const Index a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw DimensionError("DenseArray::dim: axis out of range");
    return shape_[static_cast<std::size_t>(a)];
  }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  std::span<Scalar> values() noexcept { return data_; }
  std::span<const Scalar> values() const noexcept { return data_; }
  const std::vector<Scalar>& storage() const noexcept { return data_; }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const Scalar& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  template <typename... Is>
  Scalar& operator()(Is... idx) {
    return data_[static_cast<std::size_t>(offset(idx...))];
  }
  template <typename... Is>
  const Scalar& operator()(Is... idx) const {
    return data_[static_cast<std::size_t>(offset(idx...))];
  }

  /// View as a (numel / last) x last row-major matrix.
  MatrixMap matrix() {
    const Index cols = last_extent();
    return MatrixMap(data_.data(), cols ? size() / cols : 0, cols);
  }
  ConstMatrixMap matrix() const {
    const Index cols = last_extent();
    return ConstMatrixMap(data_.data(), cols ? size() / cols : 0, cols);
  }

  ArrayMap array() { return ArrayMap(data_.data(), size()); }
  ConstArrayMap array() const { return ConstArrayMap(data_.data(), size()); }

  DenseArray reshaped(Shape shape) const {
    if (shape_numel(shape) != size()) {
      throw DimensionError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
    }
    return DenseArray(std::move(shape), data_);
  }

  template <typename Other>
  DenseArray<Other> cast() const {
    std::vector<Other> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](Scalar v) { return static_cast<Other>(v); });
    return DenseArray<Other>(shape_, std::move(out));
  }

  /// True when every element is finite; `first_bad` receives the first offender.
  bool all_finite(Index* first_bad = nullptr) const {
    for (Index i = 0; i < size(); ++i) {
      if (!std::isfinite(data_[static_cast<std::size_t>(i)])) {
        if (first_bad) *first_bad = i;
        return false;
      }
    }
    return true;
  }

  friend bool operator==(const DenseArray& a, const DenseArray& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Index last_extent() const { return shape_.empty() ? 1 : shape_.back(); }

  void check_extents() const {
    for (Index e : shape_) {
      if (e < 0) throw DimensionError("DenseArray: negative extent in " + shape_string(shape_));
    }
  }

  template <typename... Is>
  Index offset(Is... idx) const {
    if (sizeof...(Is) != shape_.size()) throw DimensionError("DenseArray: index rank mismatch");
    Index off = 0;
    std::size_t axis = 0;
    ((off = off * shape_[axis++] + static_cast<Index>(idx)), ...);
    return off;
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

/// Feature maps are rank-3 [H, W, C] arrays.
template <typename Scalar>
using FeatureMap = DenseArray<Scalar>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(s));
  }
}

// Elementwise arithmetic. Operands must have identical shapes; there is no
// implicit broadcasting.

template <typename S>
DenseArray<S> operator+(const DenseArray<S>& a, const DenseArray<S>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  DenseArray<S> out(a.shape());
  out.array() = a.array() + b.array();
  return out;
}

template <typename S>
DenseArray<S> operator-(const DenseArray<S>& a, const DenseArray<S>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  DenseArray<S> out(a.shape());
  out.array() = a.array() - b.array();
  return out;
}

template <typename S>
DenseArray<S> operator*(const DenseArray<S>& a, const DenseArray<S>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  DenseArray<S> out(a.shape());
  out.array() = a.array() * b.array();
  return out;
}

template <typename S>
DenseArray<S> operator*(S s, const DenseArray<S>& a) {
  DenseArray<S> out(a.shape());
  out.array() = s * a.array();
  return out;
}

template <typename S>
DenseArray<S>& operator+=(DenseArray<S>& a, const DenseArray<S>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  a.array() += b.array();
  return a;
}

/// Explicit broadcast of a [C] vector against the last axis of `like`.
template <typename S>
DenseArray<S> broadcast_last(const DenseArray<S>& v, const Shape& like) {
  require_rank(v.shape(), 1, "broadcast_last");
  if (like.empty() || like.back() != v.size()) {
    throw DimensionError("broadcast_last: " + shape_string(v.shape()) + " vs " + shape_string(like));
  }
  DenseArray<S> out(like);
  out.matrix().rowwise() = v.matrix().row(0);
  return out;
}

template <typename S>
S max_abs(const DenseArray<S>& a) {
  return a.empty() ? S(0) : a.array().abs().maxCoeff();
}

/// max |a - b| / max(|b|, floor) over all elements.
template <typename S>
S max_rel_diff(const DenseArray<S>& a, const DenseArray<S>& b, S floor = S(1e-300)) {
  require_same_shape(a.shape(), b.shape(), "max_rel_diff");
  S worst = 0;
  for (Index i = 0; i < a.size(); ++i) {
    const S denom = std::max(std::abs(b[i]), floor);
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

/// Relative error normalised by the largest reference magnitude.
template <typename S>
S rel_error_inf(const DenseArray<S>& a, const DenseArray<S>& ref) {
  require_same_shape(a.shape(), ref.shape(), "rel_error_inf");
  const S scale = max_abs(ref);
  const S diff = a.empty() ? S(0) : (a.array() - ref.array()).abs().maxCoeff();
  return scale > 0 ? diff / scale : diff;
}

}  // namespace sigma
