#include <cstring>
#include <functional>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "sigma/io.hpp"

using namespace sigma;
using oracle::Arr;
using json = nlohmann::json;

namespace {

SigmaConfig toy() {
  SigmaConfig c;
  c.stage_depths = {1, 1, 1, 1};
  c.stage_dims = {8, 16, 32, 64};
  c.decoder_depths = {1, 1, 1};
  c.num_classes = 5;
  return c;
}

std::size_t offset_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.offset();
  }
  FAIL("no ParseError");
  return 0;
}

std::string u32le(std::uint32_t v) {
  std::string s(4, '\0');
  for (int i = 0; i < 4; ++i) s[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFF);
  return s;
}

struct Bundle {
  json manifest;
  std::string payload;

  static Bundle split(const std::string& bytes) {
    std::uint64_t len = 0;
    for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[4 + static_cast<std::size_t>(i)]);
    return {json::parse(bytes.substr(12, len)), bytes.substr(12 + len)};
  }

  std::string join() const {
    const std::string text = manifest.dump();
    std::string out = "SGW1";
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xFF));
    return out + text + payload;
  }
};

std::string ppm(const std::string& header, std::initializer_list<int> pixels) {
  std::string s = header;
  for (int p : pixels) s.push_back(static_cast<char>(p));
  return s;
}

}  // namespace

TEST_CASE("dtype names") {
  CHECK(parse_dtype("f32") == DType::F32);
  CHECK(parse_dtype("f64") == DType::F64);
  CHECK(to_string(DType::F64) == "f64");
  CHECK(dtype_size(DType::F32) == 4);
  CHECK_THROWS_AS(parse_dtype("bf16"), ConfigError);
}

TEST_CASE("tensor records roundtrip byte for byte") {
  std::mt19937_64 rng(51);
  for (Index rank = 1; rank <= 6; ++rank) {
    Shape shape;
    for (Index k = 0; k < rank; ++k) shape.push_back(1 + (k * 2 + 1) % 3);
    const Arr a = oracle::random(shape, rng, -1e3, 1e3);
    CAPTURE(rank);

    const std::string b64 = encode_tensor(a);
    std::size_t used = 0;
    const AnyTensor t64 = decode_tensor(b64, &used);
    CHECK(used == b64.size());
    REQUIRE(std::holds_alternative<DenseArray<double>>(t64));
    CHECK(std::get<DenseArray<double>>(t64) == a);
    CHECK(encode_tensor(std::get<DenseArray<double>>(t64)) == b64);
    CHECK(b64.size() == 12 + 4 * std::size_t(rank) + 8 * std::size_t(a.size()));

    const DenseArray<float> f = a.cast<float>();
    const std::string b32 = encode_tensor(f);
    const AnyTensor t32 = decode_tensor(b32);
    REQUIRE(std::holds_alternative<DenseArray<float>>(t32));
    CHECK(std::get<DenseArray<float>>(t32) == f);
    CHECK(encode_tensor(std::get<DenseArray<float>>(t32)) == b32);
  }
  SUBCASE("header layout") {
    const std::string b = encode_tensor(Arr::from({2, 1}, {1.5, -2}));
    CHECK(b.substr(0, 4) == "SGT1");
    CHECK(b.substr(4, 4) == u32le(2));
    CHECK(b.substr(8, 4) == u32le(2));
    CHECK(b.substr(12, 8) == u32le(2) + u32le(1));
    double v = 0;
    std::memcpy(&v, b.data() + 20, 8);
    CHECK(v == 1.5);
  }
  SUBCASE("rank 0 holds one scalar") {
    std::string b = "SGT1" + u32le(2) + u32le(0);
    const double v = 3.25;
    b.append(reinterpret_cast<const char*>(&v), 8);
    const Arr t = tensor_as<double>(decode_tensor(b));
    CHECK(t.shape() == Shape{1});
    CHECK(t[0] == 3.25);
  }
  SUBCASE("records decode back to back") {
    const std::string two = encode_tensor(Arr::constant({3}, 1.0)) + encode_tensor(Arr::constant({2, 2}, 2.0));
    std::size_t used = 0;
    CHECK(tensor_as<double>(decode_tensor(two, &used)) == Arr::constant({3}, 1.0));
    CHECK(tensor_as<double>(decode_tensor(std::string_view(two).substr(used))) == Arr::constant({2, 2}, 2.0));
  }
}

TEST_CASE("tensor parse errors carry byte offsets") {
  const std::string good = encode_tensor(Arr::constant({2, 3}, 0.5));
  CHECK(offset_of([&] { decode_tensor("SGTX" + good.substr(4)); }) == 0);
  CHECK(offset_of([&] { decode_tensor("SGT1" + u32le(7) + good.substr(8)); }) == 4);
  CHECK(offset_of([&] { decode_tensor(good.substr(0, good.size() - 1)); }) == 20);
  CHECK(offset_of([&] { decode_tensor(good.substr(0, 14)); }) == 12);
  CHECK(offset_of([&] { decode_tensor(good.substr(0, 2)); }) == 0);
  CHECK(offset_of([&] { decode_tensor(good.substr(0, 5), nullptr, 100); }) == 104);
}

TEST_CASE("tensor files on disk") {
  const std::string path = "test_cli_io_tensor.sgt";
  const Arr a = Arr::from({2, 2}, {1, 2, 3, 4});
  save_tensor(path, a);
  CHECK(tensor_as<double>(load_tensor(path)) == a);
  write_file(path, encode_tensor(a) + "x");
  CHECK_THROWS_AS(load_tensor(path), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("weight bundles") {
  const SigmaConfig cfg = toy();
  const SigmaWeights<float> w = init_weights<float>(cfg, 3);
  const std::string bytes = encode_weights(cfg, w);

  SUBCASE("roundtrip is byte exact") {
    const SigmaWeights<float> back = decode_weights<float>(bytes, cfg);
    CHECK(encode_weights(cfg, back) == bytes);
    CHECK(encode_weights(cfg, init_weights<float>(cfg, 3)) == bytes);
    CHECK(encode_weights(cfg, init_weights<float>(cfg, 4)) != bytes);
  }
  SUBCASE("manifest lists the layout") {
    const BundleManifest m = read_manifest(bytes);
    CHECK(m.config == cfg);
    CHECK(m.config_hash == cfg.hash());
    const std::vector<ParamEntry> layout = model_layout(cfg);
    CHECK(m.tensors.size() == layout.size());
    Index total = 0;
    for (const ParamEntry& e : layout) {
      REQUIRE(m.tensors.count(e.name) == 1);
      const BundleEntry& b = m.tensors.at(e.name);
      CHECK(b.shape == e.shape);
      CHECK(b.dtype == DType::F32);
      total += shape_numel(b.shape);
    }
    CHECK(total == count_params(cfg));
  }
  SUBCASE("f64 weights convert on load") {
    const SigmaWeights<double> w64 = init_weights<double>(cfg, 3);
    const std::string b64 = encode_weights(cfg, w64);
    CHECK(read_manifest(b64).tensors.begin()->second.dtype == DType::F64);
    CHECK(encode_weights(cfg, decode_weights<double>(b64, cfg)) == b64);
    CHECK(encode_weights(cfg, decode_weights<float>(b64, cfg)) == bytes);
  }
  SUBCASE("a different config is rejected") {
    SigmaConfig other = cfg;
    other.num_classes = 6;
    CHECK_THROWS_AS(decode_weights<float>(bytes, other), ConfigError);
  }
  SUBCASE("a tampered hash is rejected") {
    Bundle b = Bundle::split(bytes);
    b.manifest["config_hash"] = "0000000000000000";
    CHECK_THROWS_AS(read_manifest(b.join()), ParseError);
  }
  SUBCASE("shape drift is rejected") {
    Bundle b = Bundle::split(bytes);
    json& entry = b.manifest["tensors"]["classifier.out.b"];
    REQUIRE(entry.is_object());
    entry["shape"] = {6};
    CHECK_THROWS_AS(decode_weights<float>(b.join(), cfg), ConfigError);
  }
  SUBCASE("extra tensors are rejected") {
    Bundle b = Bundle::split(bytes);
    b.manifest["tensors"]["extra"] = b.manifest["tensors"].begin().value();
    CHECK_THROWS_AS(decode_weights<float>(b.join(), cfg), ConfigError);
  }
  SUBCASE("missing tensors are rejected") {
    Bundle b = Bundle::split(bytes);
    b.manifest["tensors"].erase(b.manifest["tensors"].begin());
    CHECK_THROWS_AS(decode_weights<float>(b.join(), cfg), ConfigError);
  }
  SUBCASE("truncated payload") {
    CHECK_THROWS_AS(decode_weights<float>(bytes.substr(0, bytes.size() - 1), cfg), ParseError);
    CHECK(offset_of([&] { read_manifest("SGW2" + bytes.substr(4)); }) == 0);
    CHECK_THROWS_AS(read_manifest(bytes.substr(0, 20)), ParseError);
  }
}

TEST_CASE("PPM images") {
  SUBCASE("one white pixel") {
    const Arr img = parse_ppm(ppm("P6\n1 1\n255\n", {255, 255, 255}));
    CHECK(img == Arr::constant({1, 1, 3}, 1.0));
  }
  SUBCASE("comments and pixel order") {
    const Arr img = parse_ppm(ppm("P6 # c\n2 # w\n1\n255\n", {0, 51, 102, 153, 204, 255}));
    CHECK(img.shape() == Shape{1, 2, 3});
    CHECK(img(0, 1, 0) == 153 / 255.0);
    CHECK(img(0, 0, 1) == 0.2);
  }
  SUBCASE("encode then parse is exact on the 8-bit grid") {
    std::mt19937_64 rng(52);
    Arr img({5, 7, 3});
    for (Index i = 0; i < img.size(); ++i) img[i] = double(rng() % 256) / 255.0;
    const std::string bytes = encode_ppm(img);
    CHECK(parse_ppm(bytes) == img);
    CHECK(encode_ppm(parse_ppm(bytes)) == bytes);
  }
  SUBCASE("values are clamped and rounded") {
    const Arr img = Arr::from({1, 1, 3}, {-0.5, 2.0, 0.5});
    const std::string b = encode_ppm(img);
    CHECK(static_cast<unsigned char>(b[b.size() - 3]) == 0);
    CHECK(static_cast<unsigned char>(b[b.size() - 2]) == 255);
    CHECK(static_cast<unsigned char>(b[b.size() - 1]) == 128);
  }
  SUBCASE("errors") {
    const std::string truncated = ppm("P6\n2 2\n255\n", {1, 2, 3});
    CHECK(offset_of([&] { parse_ppm(truncated); }) == truncated.size());
    CHECK(offset_of([&] { parse_ppm(ppm("P6\n1 1\n65535\n", {0, 0, 0, 0, 0, 0})); }) == 6);
    CHECK(offset_of([&] { parse_ppm("P3\n1 1\n255\n   "); }) == 0);
    CHECK_THROWS_AS(parse_ppm(ppm("P6\n0 1\n255\n", {})), ParseError);
    CHECK_THROWS_AS(encode_ppm(Arr({2, 2, 4})), DimensionError);
  }
}

TEST_CASE("label maps") {
  SUBCASE("MFNet palette") {
    const Palette& p = mfnet_palette();
    REQUIRE(p.size() == 9);
    CHECK(p[0] == Color{0, 0, 0});
    CHECK(p[1] == Color{64, 0, 128});
    CHECK(make_palette(9) == p);
    CHECK(make_palette(4) == Palette(p.begin(), p.begin() + 4));
  }
  SUBCASE("larger palettes stay distinct") {
    const Palette p = make_palette(40);
    REQUIRE(p.size() == 40);
    std::set<Color> seen(p.begin(), p.end());
    CHECK(seen.size() == 40);
    CHECK_THROWS_AS(make_palette(0), ConfigError);
  }
  SUBCASE("roundtrip") {
    for (Index K : {Index{9}, Index{21}}) {
      const Palette p = make_palette(K);
      SegmentationMap m{3, 4, K, {}};
      for (Index i = 0; i < 12; ++i) m.labels.push_back(static_cast<std::int32_t>((i * 5) % K));
      const std::string bytes = encode_label_ppm(m, p);
      const SegmentationMap back = decode_label_ppm(bytes, p);
      CHECK(back.height == 3);
      CHECK(back.width == 4);
      CHECK(back.labels == m.labels);
    }
  }
  SUBCASE("an unknown colour is a parse error at its pixel") {
    const std::string bytes = ppm("P6\n2 1\n255\n", {0, 0, 0, 1, 2, 3});
    CHECK(offset_of([&] { decode_label_ppm(bytes, mfnet_palette()); }) == 14);
  }
  SUBCASE("palette too small") {
    const SegmentationMap m{1, 1, 12, {11}};
    CHECK_THROWS_AS(encode_label_ppm(m, mfnet_palette()), ConfigError);
  }
}
