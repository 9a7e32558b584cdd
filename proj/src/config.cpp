#include "sigma/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sigma {

using nlohmann::json;

std::string_view to_string(FusionMode m) {
  switch (m) {
    case FusionMode::Full: return "full";
    case FusionMode::CrombOnly: return "cromb_only";
    case FusionMode::ConmbOnly: return "conmb_only";
    case FusionMode::Sum: return "sum";
  }
  return "?";
}

std::string_view to_string(DecoderKind k) { return k == DecoderKind::Cavssb ? "cavssb" : "mlp"; }

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "full") return FusionMode::Full;
  if (s == "cromb_only") return FusionMode::CrombOnly;
  if (s == "conmb_only") return FusionMode::ConmbOnly;
  if (s == "sum") return FusionMode::Sum;
  throw ConfigError("unknown fusion_mode '" + std::string(s) + "'");
}

DecoderKind parse_decoder_kind(std::string_view s) {
  if (s == "cavssb") return DecoderKind::Cavssb;
  if (s == "mlp") return DecoderKind::Mlp;
  throw ConfigError("unknown decoder_kind '" + std::string(s) + "'");
}

SigmaConfig SigmaConfig::tiny() { return SigmaConfig{}; }

SigmaConfig SigmaConfig::small() {
  SigmaConfig c;
  c.stage_depths = {2, 2, 27, 2};
  return c;
}

SigmaConfig SigmaConfig::base() {
  SigmaConfig c;
  c.stage_depths = {2, 2, 27, 2};
  c.stage_dims = {128, 256, 512, 1024};
  return c;
}

SigmaConfig SigmaConfig::preset(std::string_view name) {
  if (name == "tiny") return tiny();
  if (name == "small") return small();
  if (name == "base") return base();
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected tiny, small, base)");
}

void SigmaConfig::validate() const {
  for (Index k = 0; k < kNumStages; ++k) {
    if (stage_depths[k] < 0) throw ConfigError("stage_depths must be non-negative");
    if (stage_dims[k] < 1) throw ConfigError("stage_dims must be positive");
    if (k > 0 && stage_dims[k] != 2 * stage_dims[k - 1]) {
      throw ConfigError("stage_dims must double per stage (patch merging), got " +
                        std::to_string(stage_dims[k - 1]) + " -> " + std::to_string(stage_dims[k]));
    }
  }
  for (Index d : decoder_depths) {
    if (d < 0) throw ConfigError("decoder_depths must be non-negative");
  }
  if (state_size < 1) throw ConfigError("state_size must be >= 1");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
}

std::string SigmaConfig::to_json() const {
  json j;
  j["stage_depths"] = stage_depths;
  j["stage_dims"] = stage_dims;
  j["state_size"] = state_size;
  j["decoder_depths"] = decoder_depths;
  j["num_classes"] = num_classes;
  j["fusion_mode"] = std::string(to_string(fusion_mode));
  j["decoder_kind"] = std::string(to_string(decoder_kind));
  j["cross_mode"] = std::string(to_string(cross_mode));
  return j.dump();  // nlohmann orders object keys, so this is canonical
}

namespace {

template <std::size_t N>
void read_array(const json& j, const char* key, std::array<Index, N>& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != N) {
    throw ConfigError(std::string("config: '") + key + "' must be an array of " + std::to_string(N) + " integers");
  }
  for (std::size_t i = 0; i < N; ++i) out[i] = v[i].get<Index>();
}

}  // namespace

SigmaConfig SigmaConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  static const char* kKnown[] = {"preset",      "stage_depths", "stage_dims",   "state_size",  "decoder_depths",
                                 "num_classes", "fusion_mode",  "decoder_kind", "cross_mode"};
  for (const auto& item : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), item.key()) == std::end(kKnown)) {
      throw ConfigError("config: unknown key '" + item.key() + "'");
    }
  }
  try {
    SigmaConfig c = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : SigmaConfig{};
    read_array(j, "stage_depths", c.stage_depths);
    read_array(j, "stage_dims", c.stage_dims);
    read_array(j, "decoder_depths", c.decoder_depths);
    if (j.contains("state_size")) c.state_size = j.at("state_size").get<Index>();
    if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<Index>();
    if (j.contains("fusion_mode")) c.fusion_mode = parse_fusion_mode(j.at("fusion_mode").get<std::string>());
    if (j.contains("decoder_kind")) c.decoder_kind = parse_decoder_kind(j.at("decoder_kind").get<std::string>());
    if (j.contains("cross_mode")) c.cross_mode = parse_cross_mode(j.at("cross_mode").get<std::string>());
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

SigmaConfig SigmaConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string SigmaConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json())));
  return buf;
}

}  // namespace sigma
