#pragma once

// File formats.
//
// TensorFile (.sgt), all integers little-endian:
//   "SGT1" | u32 dtype (1 = f32, 2 = f64) | u32 rank | u32 dims[rank] | payload (row-major)
//
// WeightBundle (.sgw):
//   "SGW1" | u64 manifest byte length | manifest JSON | concatenated TensorFile records
// The manifest holds the model config, its hash, and for every tensor its
// shape, dtype, and the byte offset/length of its record relative to the
// first record.
//
// Images are binary PPM (P6, maxval 255).

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>

#include "sigma/model.hpp"

namespace sigma {

enum class DType : std::uint32_t { F32 = 1, F64 = 2 };

std::string_view to_string(DType t);
DType parse_dtype(std::string_view s);
std::size_t dtype_size(DType t);

template <typename S>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>, "only f32 and f64 are serialisable");
  return std::is_same_v<S, float> ? DType::F32 : DType::F64;
}

using AnyTensor = std::variant<DenseArray<float>, DenseArray<double>>;

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

std::string encode_tensor(const DenseArray<float>& a);
std::string encode_tensor(const DenseArray<double>& a);
/// Decode one record from the front of `bytes`. `consumed` receives its
/// length; `base` is added to byte offsets in error messages.
AnyTensor decode_tensor(std::string_view bytes, std::size_t* consumed = nullptr, std::size_t base = 0);

/// Decode and convert to S.
template <typename S>
DenseArray<S> tensor_as(const AnyTensor& t) {
  return std::visit([](const auto& a) { return a.template cast<S>(); }, t);
}

template <typename S>
void save_tensor(const std::string& path, const DenseArray<S>& a) {
  write_file(path, encode_tensor(a));
}

AnyTensor load_tensor(const std::string& path);

// ---------------------------------------------------------------------------
// Weight bundles

struct BundleEntry {
  Shape shape;
  DType dtype = DType::F32;
  std::uint64_t offset = 0;
  std::uint64_t bytes = 0;
};

struct BundleManifest {
  SigmaConfig config;
  std::string config_hash;
  std::map<std::string, BundleEntry> tensors;
};

namespace detail {

struct BundleWriter {
  NameScope scope;
  std::map<std::string, BundleEntry> tensors;
  std::string payload;

  template <typename S>
  void param(std::string_view name, DenseArray<S>& a, const Shape& shape, ParamKind) {
    const std::string full = scope.qualify(name);
    if (a.shape() != shape) {
      throw DimensionError("save_weights: '" + full + "' has shape " + shape_string(a.shape()) + ", layout says " +
                           shape_string(shape));
    }
    const std::string rec = encode_tensor(a);
    tensors[full] = {shape, dtype_of<S>(), payload.size(), rec.size()};
    payload += rec;
  }
};

std::string assemble_bundle(const SigmaConfig& cfg, const BundleWriter& w);

struct BundleReader {
  NameScope scope;
  const BundleManifest* manifest = nullptr;
  std::string_view payload;
  std::size_t payload_base = 0;
  std::size_t visited = 0;

  AnyTensor fetch(const std::string& full, const Shape& shape) const;

  template <typename S>
  void param(std::string_view name, DenseArray<S>& a, const Shape& shape, ParamKind) {
    a = tensor_as<S>(fetch(scope.qualify(name), shape));
    ++visited;
  }
};

/// Split a bundle into manifest and payload; `payload_base` receives the
/// payload's byte offset within `bytes`.
BundleManifest parse_bundle(std::string_view bytes, std::string_view* payload, std::size_t* payload_base);

}  // namespace detail

/// Serialise weights for `cfg`. Every tensor must have its layout shape.
template <typename S>
std::string encode_weights(const SigmaConfig& cfg, const SigmaWeights<S>& weights) {
  detail::BundleWriter w;
  // BundleWriter only reads.
  const_cast<SigmaWeights<S>&>(weights).visit(w, cfg);
  return detail::assemble_bundle(cfg, w);
}

template <typename S>
void save_weights(const std::string& path, const SigmaConfig& cfg, const SigmaWeights<S>& weights) {
  write_file(path, encode_weights(cfg, weights));
}

BundleManifest read_manifest(std::string_view bytes);

/// Load weights for `cfg`, rejecting a config-hash mismatch, missing or extra
/// tensors and any shape drift from the layout.
template <typename S>
SigmaWeights<S> decode_weights(std::string_view bytes, const SigmaConfig& cfg) {
  cfg.validate();
  std::string_view payload;
  std::size_t base = 0;
  const BundleManifest m = detail::parse_bundle(bytes, &payload, &base);
  if (m.config_hash != cfg.hash() || !(m.config == cfg)) {
    throw ConfigError("weights: bundle was written for config " + m.config_hash + ", expected " + cfg.hash());
  }
  detail::BundleReader r;
  r.manifest = &m;
  r.payload = payload;
  r.payload_base = base;
  SigmaWeights<S> w;
  w.visit(r, cfg);
  if (r.visited != m.tensors.size()) {
    throw ConfigError("weights: bundle holds " + std::to_string(m.tensors.size()) + " tensors, layout expects " +
                      std::to_string(r.visited));
  }
  return w;
}

template <typename S>
SigmaWeights<S> load_weights(const std::string& path, const SigmaConfig& cfg) {
  return decode_weights<S>(read_file(path), cfg);
}

// ---------------------------------------------------------------------------
// Images

using Color = std::array<std::uint8_t, 3>;
using Palette = std::vector<Color>;

/// Fixed colours for the nine MFNet classes, in class order: unlabeled, car,
/// person, bike, curve, car stop, guardrail, color cone, bump.
const Palette& mfnet_palette();
/// `num_classes` distinct colours; the first nine are the MFNet palette.
Palette make_palette(Index num_classes);

/// P6 bytes -> [H, W, 3] with values in [0, 1].
DenseArray<double> parse_ppm(std::string_view bytes);
DenseArray<double> read_ppm(const std::string& path);
/// [H, W, 3] in [0, 1] -> P6 bytes (rounded, clamped).
std::string encode_ppm(const DenseArray<double>& image);
void write_ppm(const std::string& path, const DenseArray<double>& image);

std::string encode_label_ppm(const SegmentationMap& map, const Palette& palette);
void write_label_ppm(const SegmentationMap& map, const Palette& palette, const std::string& path);
/// Inverse palette lookup; an unknown colour is a ParseError.
SegmentationMap decode_label_ppm(std::string_view bytes, const Palette& palette);

}  // namespace sigma
