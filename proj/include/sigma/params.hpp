#pragma once

// Named-parameter plumbing. Every weight struct exposes
//
//   template <class V> void visit(V& v, <dims>)
//
// which calls v.param(name, array, expected_shape, kind) once per tensor and
// opens nested name scopes with ParamScope. The same walk drives allocation,
// seeded initialisation, parameter counting, and bundle save/load, so a
// layout is declared exactly once.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "sigma/dense_array.hpp"

namespace sigma {

enum class ParamKind {
  Projection,  // truncated normal, sigma 0.02
  Bias,        // zeros
  NormScale,   // ones
  NormShift,   // zeros
  ConvKernel,  // truncated normal, sigma 0.02
  StateLog,    // A_log: log(n + 1), so A spans -1..-N
  Skip,        // D: ones
  DtBias,      // inverse softplus of a log-uniform draw in [1e-3, 0.1]
  Scale,       // learnable scalar gates: ones
};

class NameScope {
 public:
  void push(std::string_view part) { parts_.emplace_back(part); }
  void pop() { parts_.pop_back(); }

  std::string qualify(std::string_view leaf) const {
    std::string out;
    for (const auto& p : parts_) {
      out += p;
      out += '.';
    }
    out += leaf;
    return out;
  }

 private:
  std::vector<std::string> parts_;
};

/// RAII name scope for visitors (anything with a `NameScope scope` member).
template <class V>
class ParamScope {
 public:
  ParamScope(V& v, std::string_view part) : v_(v) { v_.scope.push(part); }
  ParamScope(V& v, std::string_view part, std::size_t index) : v_(v) {
    v_.scope.push(std::string(part) + std::to_string(index));
  }
  ~ParamScope() { v_.scope.pop(); }
  ParamScope(const ParamScope&) = delete;
  ParamScope& operator=(const ParamScope&) = delete;

 private:
  V& v_;
};

struct ParamEntry {
  std::string name;
  Shape shape;
  ParamKind kind;
};

/// Records the layout without touching the arrays.
struct LayoutCollector {
  NameScope scope;
  std::vector<ParamEntry> entries;

  template <typename S>
  void param(std::string_view name, DenseArray<S>&, const Shape& shape, ParamKind kind) {
    entries.push_back({scope.qualify(name), shape, kind});
  }

  Index count() const {
    Index n = 0;
    for (const auto& e : entries) n += shape_numel(e.shape);
    return n;
  }
};

/// Zero-allocates every parameter at its declared shape.
struct ZeroAllocator {
  NameScope scope;

  template <typename S>
  void param(std::string_view, DenseArray<S>& a, const Shape& shape, ParamKind) {
    a = DenseArray<S>(shape);
  }
};

/// 64-bit FNV-1a, used for per-tensor seeds and config hashes.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Deterministic initialiser. Every tensor draws from its own generator seeded
/// by (seed, qualified name), so values do not depend on visit order.
/// Normal draws use the Marsaglia polar method over raw mt19937_64 output to
/// stay identical across standard library implementations.
struct SeededInitializer {
  NameScope scope;
  std::uint64_t seed = 0;
  double std_dev = 0.02;
  double dt_min = 1e-3;
  double dt_max = 0.1;

  template <typename S>
  void param(std::string_view name, DenseArray<S>& a, const Shape& shape, ParamKind kind) {
    a = DenseArray<S>(shape);
    const std::string full = scope.qualify(name);
    std::mt19937_64 gen(fnv1a64(full, seed * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull));
    switch (kind) {
      case ParamKind::Projection:
      case ParamKind::ConvKernel:
      {
        NormalPairs normal;
        for (Index i = 0; i < a.size(); ++i) a[i] = static_cast<S>(normal.truncated(gen) * std_dev);
        break;
      }
      case ParamKind::Bias:
      case ParamKind::NormShift:
        break;
      case ParamKind::NormScale:
      case ParamKind::Skip:
      case ParamKind::Scale:
        for (Index i = 0; i < a.size(); ++i) a[i] = S(1);
        break;
      case ParamKind::StateLog: {
        const Index n_state = a.dim(-1);
        for (Index i = 0; i < a.size(); ++i) a[i] = static_cast<S>(std::log(static_cast<double>(i % n_state + 1)));
        break;
      }
      case ParamKind::DtBias:
        for (Index i = 0; i < a.size(); ++i) {
          const double u = uniform(gen);
          const double dt = std::exp(std::log(dt_min) + u * (std::log(dt_max) - std::log(dt_min)));
          a[i] = static_cast<S>(dt + std::log(-std::expm1(-dt)));  // softplus^-1(dt)
        }
        break;
    }
  }

  static double uniform(std::mt19937_64& gen) {
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;  // [0, 1)
  }

  struct NormalPairs {
    double spare = 0;
    bool has_spare = false;

    double next(std::mt19937_64& gen) {
      if (has_spare) {
        has_spare = false;
        return spare;
      }
      for (;;) {
        const double u = 2 * uniform(gen) - 1, v = 2 * uniform(gen) - 1;
        const double s = u * u + v * v;
        if (s >= 1 || s == 0) continue;
        const double f = std::sqrt(-2 * std::log(s) / s);
        spare = v * f;
        has_spare = true;
        return u * f;
      }
    }

    /// Standard normal truncated to [-2, 2].
    double truncated(std::mt19937_64& gen) {
      for (;;) {
        const double z = next(gen);
        if (std::abs(z) <= 2.0) return z;
      }
    }
  };
};

template <class Weights, class Dims>
std::vector<ParamEntry> collect_layout(const Dims& dims) {
  Weights w;
  LayoutCollector c;
  w.visit(c, dims);
  return std::move(c.entries);
}

template <class Weights, class Dims>
Weights zero_weights(const Dims& dims) {
  Weights w;
  ZeroAllocator z;
  w.visit(z, dims);
  return w;
}

template <class Weights, class Dims>
Weights random_weights(const Dims& dims, std::uint64_t seed) {
  Weights w;
  SeededInitializer init;
  init.seed = seed;
  w.visit(init, dims);
  return w;
}

}  // namespace sigma
