#include "sigma/io.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sigma {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::string_view to_string(DType t) { return t == DType::F32 ? "f32" : "f64"; }

DType parse_dtype(std::string_view s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  throw ConfigError("unknown dtype '" + std::string(s) + "'");
}

std::size_t dtype_size(DType t) { return t == DType::F32 ? 4 : 8; }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  in.seekg(0, std::ios::end);
  std::string bytes(static_cast<std::size_t>(in.tellg()), '\0');
  in.seekg(0);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw Error("read from '" + path + "' failed");
  return bytes;
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

namespace {

constexpr std::string_view kTensorMagic = "SGT1";
constexpr std::string_view kBundleMagic = "SGW1";

template <typename T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  char buf[sizeof(T)];
  std::memcpy(buf, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

/// Bounds-checked little-endian reader over a byte span.
class Cursor {
 public:
  Cursor(std::string_view bytes, std::size_t base) : bytes_(bytes), base_(base) {}

  std::size_t pos() const { return pos_; }
  std::size_t abs() const { return base_ + pos_; }

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(std::string("truncated ") + what + ": need " + std::to_string(n) + " bytes, have " +
                           std::to_string(bytes_.size() - pos_),
                       abs());
    }
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  T read(const char* what) {
    return get_le<T>(take(sizeof(T), what).data());
  }

 private:
  std::string_view bytes_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

template <typename S>
std::string encode_tensor_impl(const DenseArray<S>& a) {
  std::string out(kTensorMagic);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dtype_of<S>()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.rank()));
  for (Index d : a.shape()) {
    if (d < 0 || d > Index{0xFFFFFFFF}) throw DimensionError("encode_tensor: extent does not fit u32");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(a.data()), static_cast<std::size_t>(a.size()) * sizeof(S));
  } else {
    out.reserve(out.size() + static_cast<std::size_t>(a.size()) * sizeof(S));
    for (S v : a.values()) put_le<S>(out, v);
  }
  return out;
}

template <typename S>
DenseArray<S> read_payload(Cursor& cur, Shape shape) {
  const Index n = shape_numel(shape);
  const std::string_view raw = cur.take(static_cast<std::size_t>(n) * sizeof(S), "tensor payload");
  DenseArray<S> a(std::move(shape));
  for (Index i = 0; i < n; ++i) a[i] = get_le<S>(raw.data() + static_cast<std::size_t>(i) * sizeof(S));
  return a;
}

}  // namespace

std::string encode_tensor(const DenseArray<float>& a) { return encode_tensor_impl(a); }
std::string encode_tensor(const DenseArray<double>& a) { return encode_tensor_impl(a); }

AnyTensor decode_tensor(std::string_view bytes, std::size_t* consumed, std::size_t base) {
  Cursor cur(bytes, base);
  if (cur.take(4, "tensor header") != kTensorMagic) throw ParseError("bad tensor magic", base);
  const std::size_t dtype_at = cur.abs();
  const auto code = cur.read<std::uint32_t>("tensor header");
  if (code != 1 && code != 2) throw ParseError("unknown dtype code " + std::to_string(code), dtype_at);
  const auto rank = cur.read<std::uint32_t>("tensor header");
  if (rank > 32) throw ParseError("implausible rank " + std::to_string(rank), dtype_at + 4);
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(cur.read<std::uint32_t>("tensor dims")));
  // A rank-0 record holds one scalar; DenseArray represents it as shape [1].
  if (shape.empty()) shape.push_back(1);
  AnyTensor out = code == 1 ? AnyTensor(read_payload<float>(cur, shape)) : AnyTensor(read_payload<double>(cur, shape));
  if (consumed) *consumed = cur.pos();
  return out;
}

AnyTensor load_tensor(const std::string& path) {
  const std::string bytes = read_file(path);
  std::size_t used = 0;
  AnyTensor t = decode_tensor(bytes, &used);
  if (used != bytes.size()) throw ParseError("trailing bytes after tensor record", used);
  return t;
}

// ---------------------------------------------------------------------------
// Weight bundles

namespace detail {

std::string assemble_bundle(const SigmaConfig& cfg, const BundleWriter& w) {
  json tensors = json::object();
  for (const auto& [name, e] : w.tensors) {
    tensors[name] = {{"shape", e.shape}, {"dtype", to_string(e.dtype)}, {"offset", e.offset}, {"bytes", e.bytes}};
  }
  json manifest = {{"format", 1},
                   {"config", json::parse(cfg.to_json())},
                   {"config_hash", cfg.hash()},
                   {"tensors", std::move(tensors)}};
  const std::string text = manifest.dump();
  std::string out(kBundleMagic);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += w.payload;
  return out;
}

BundleManifest parse_bundle(std::string_view bytes, std::string_view* payload, std::size_t* payload_base) {
  Cursor cur(bytes, 0);
  if (cur.take(4, "bundle header") != kBundleMagic) throw ParseError("bad weight bundle magic", 0);
  const auto len = cur.read<std::uint64_t>("bundle header");
  const std::size_t json_at = cur.pos();
  if (len > bytes.size()) throw ParseError("manifest length exceeds file size", 4);
  const std::string_view text = cur.take(static_cast<std::size_t>(len), "manifest");

  BundleManifest m;
  try {
    const json j = json::parse(text);
    if (j.at("format").get<int>() != 1) throw ParseError("unsupported bundle format", json_at);
    m.config = SigmaConfig::from_json(j.at("config").dump());
    m.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& [name, e] : j.at("tensors").items()) {
      m.tensors[name] = {e.at("shape").get<Shape>(), parse_dtype(e.at("dtype").get<std::string>()),
                         e.at("offset").get<std::uint64_t>(), e.at("bytes").get<std::uint64_t>()};
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed manifest: ") + e.what(), json_at);
  }
  if (m.config_hash != m.config.hash()) throw ParseError("manifest config_hash does not match its config", json_at);
  *payload_base = cur.pos();
  *payload = bytes.substr(cur.pos());
  return m;
}

AnyTensor BundleReader::fetch(const std::string& full, const Shape& shape) const {
  const auto it = manifest->tensors.find(full);
  if (it == manifest->tensors.end()) throw ConfigError("weights: missing tensor '" + full + "'");
  const BundleEntry& e = it->second;
  if (e.shape != shape) {
    throw ConfigError("weights: shape drift for '" + full + "': bundle " + shape_string(e.shape) + ", config " +
                      shape_string(shape));
  }
  if (e.offset > payload.size() || e.bytes > payload.size() - e.offset) {
    throw ParseError("weights: record for '" + full + "' lies outside the payload", payload_base + e.offset);
  }
  std::size_t used = 0;
  AnyTensor t = decode_tensor(payload.substr(e.offset, e.bytes), &used, payload_base + e.offset);
  const Shape& got = std::visit([](const auto& a) -> const Shape& { return a.shape(); }, t);
  if (got != shape || used != e.bytes) {
    throw ParseError("weights: record for '" + full + "' disagrees with the manifest", payload_base + e.offset);
  }
  return t;
}

}  // namespace detail

BundleManifest read_manifest(std::string_view bytes) {
  std::string_view payload;
  std::size_t base = 0;
  return detail::parse_bundle(bytes, &payload, &base);
}

// ---------------------------------------------------------------------------
// Images

const Palette& mfnet_palette() {
  static const Palette p = {
      {0, 0, 0},        // unlabeled
      {64, 0, 128},     // car
      {64, 64, 0},      // person
      {0, 128, 192},    // bike
      {0, 0, 192},      // curve
      {128, 128, 0},    // car stop
      {64, 64, 128},    // guardrail
      {192, 128, 128},  // color cone
      {192, 64, 0},     // bump
  };
  return p;
}

Palette make_palette(Index num_classes) {
  if (num_classes < 1 || num_classes > 256) throw ConfigError("make_palette: need 1..256 classes");
  Palette p = mfnet_palette();
  p.resize(std::min<std::size_t>(p.size(), static_cast<std::size_t>(num_classes)));
  // Extra classes use the bit-interleaved PASCAL VOC colour map, skipping
  // colours already taken.
  for (unsigned i = 1; p.size() < static_cast<std::size_t>(num_classes); ++i) {
    Color c{0, 0, 0};
    unsigned id = i;
    for (int shift = 7; shift >= 0 && id; --shift, id >>= 3) {
      c[0] |= static_cast<std::uint8_t>(((id >> 0) & 1) << shift);
      c[1] |= static_cast<std::uint8_t>(((id >> 1) & 1) << shift);
      c[2] |= static_cast<std::uint8_t>(((id >> 2) & 1) << shift);
    }
    if (std::find(p.begin(), p.end(), c) == p.end()) p.push_back(c);
  }
  return p;
}

namespace {

struct PpmHeader {
  Index width = 0, height = 0;
  std::size_t data_offset = 0;
};

PpmHeader parse_ppm_header(std::string_view bytes) {
  std::size_t pos = 0;
  if (bytes.size() < 2 || bytes.substr(0, 2) != "P6") throw ParseError("not a binary PPM (expected 'P6')", 0);
  pos = 2;
  const auto skip_space = [&] {
    for (;;) {
      if (pos >= bytes.size()) return;
      const char ch = bytes[pos];
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos;
      } else {
        return;
      }
    }
  };
  const auto number = [&](const char* what) {
    const std::size_t before = pos;
    skip_space();
    if (pos == before) throw ParseError(std::string("expected whitespace before ") + what, pos);
    if (pos >= bytes.size()) throw ParseError(std::string("truncated header: missing ") + what, pos);
    const std::size_t start = pos;
    long long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000'000) throw ParseError(std::string(what) + " too large", start);
      ++pos;
    }
    if (pos == start) throw ParseError(std::string("expected ") + what, start);
    return v;
  };
  PpmHeader h;
  h.width = number("width");
  h.height = number("height");
  const std::size_t maxval_at = pos;
  const long long maxval = number("maxval");
  if (h.width < 1 || h.height < 1) throw ParseError("image extents must be positive", maxval_at);
  if (maxval != 255) throw ParseError("only maxval 255 is supported, got " + std::to_string(maxval), maxval_at);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw ParseError("expected a single whitespace byte after maxval", pos);
  }
  h.data_offset = pos + 1;
  const std::size_t need = static_cast<std::size_t>(h.width * h.height * 3);
  if (bytes.size() - h.data_offset < need) {
    throw ParseError("truncated pixel data: need " + std::to_string(need) + " bytes, have " +
                         std::to_string(bytes.size() - h.data_offset),
                     bytes.size());
  }
  return h;
}

std::string ppm_header(Index height, Index width) {
  return "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

}  // namespace

DenseArray<double> parse_ppm(std::string_view bytes) {
  const PpmHeader h = parse_ppm_header(bytes);
  DenseArray<double> img({h.height, h.width, 3});
  for (Index i = 0; i < img.size(); ++i) {
    img[i] = static_cast<unsigned char>(bytes[h.data_offset + static_cast<std::size_t>(i)]) / 255.0;
  }
  return img;
}

DenseArray<double> read_ppm(const std::string& path) { return parse_ppm(read_file(path)); }

std::string encode_ppm(const DenseArray<double>& image) {
  require_rank(image.shape(), 3, "encode_ppm");
  if (image.dim(2) != 3) throw DimensionError("encode_ppm: expected 3 channels");
  std::string out = ppm_header(image.dim(0), image.dim(1));
  for (double v : image.values()) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  return out;
}

void write_ppm(const std::string& path, const DenseArray<double>& image) { write_file(path, encode_ppm(image)); }

std::string encode_label_ppm(const SegmentationMap& map, const Palette& palette) {
  map.validate();
  if (static_cast<Index>(palette.size()) < map.num_classes) {
    throw ConfigError("encode_label_ppm: palette has " + std::to_string(palette.size()) + " colours for " +
                      std::to_string(map.num_classes) + " classes");
  }
  std::string out = ppm_header(map.height, map.width);
  for (std::int32_t l : map.labels) {
    const Color& c = palette[static_cast<std::size_t>(l)];
    out.append(reinterpret_cast<const char*>(c.data()), 3);
  }
  return out;
}

void write_label_ppm(const SegmentationMap& map, const Palette& palette, const std::string& path) {
  write_file(path, encode_label_ppm(map, palette));
}

SegmentationMap decode_label_ppm(std::string_view bytes, const Palette& palette) {
  const PpmHeader h = parse_ppm_header(bytes);
  std::map<Color, std::int32_t> inverse;
  for (std::size_t k = 0; k < palette.size(); ++k) inverse.emplace(palette[k], static_cast<std::int32_t>(k));
  SegmentationMap map{h.height, h.width, static_cast<Index>(palette.size()), {}};
  map.labels.reserve(static_cast<std::size_t>(h.height * h.width));
  for (Index p = 0; p < h.height * h.width; ++p) {
    const std::size_t at = h.data_offset + static_cast<std::size_t>(p) * 3;
    const Color c{static_cast<std::uint8_t>(bytes[at]), static_cast<std::uint8_t>(bytes[at + 1]),
                  static_cast<std::uint8_t>(bytes[at + 2])};
    const auto it = inverse.find(c);
    if (it == inverse.end()) throw ParseError("pixel colour is not in the palette", at);
    map.labels.push_back(it->second);
  }
  return map;
}

}  // namespace sigma
