#pragma once

#include <array>
#include <string>
#include <string_view>

#include "sigma/fusion.hpp"

namespace sigma {

enum class FusionMode { Full, CrombOnly, ConmbOnly, Sum };
enum class DecoderKind { Cavssb, Mlp };

std::string_view to_string(FusionMode m);
std::string_view to_string(DecoderKind k);
FusionMode parse_fusion_mode(std::string_view s);
DecoderKind parse_decoder_kind(std::string_view s);

inline constexpr Index kNumStages = 4;
inline constexpr Index kNumDecoderGroups = 3;
/// Total downsampling of the deepest stage relative to the input.
inline constexpr Index kInputMultiple = 32;

/// Complete architecture description, including ablation switches.
struct SigmaConfig {
  std::array<Index, kNumStages> stage_depths{2, 2, 9, 2};
  std::array<Index, kNumStages> stage_dims{96, 192, 384, 768};
  Index state_size = 4;
  std::array<Index, kNumDecoderGroups> decoder_depths{4, 4, 4};
  Index num_classes = 9;
  FusionMode fusion_mode = FusionMode::Full;
  DecoderKind decoder_kind = DecoderKind::Cavssb;
  CrossExchangeMode cross_mode = CrossExchangeMode::C;

  static SigmaConfig tiny();
  static SigmaConfig small();
  static SigmaConfig base();
  static SigmaConfig preset(std::string_view name);

  /// Throws ConfigError when the description is inconsistent.
  void validate() const;

  bool uses_cromb() const { return fusion_mode == FusionMode::Full || fusion_mode == FusionMode::CrombOnly; }
  bool uses_conmb() const { return fusion_mode == FusionMode::Full || fusion_mode == FusionMode::ConmbOnly; }

  /// Canonical JSON text (stable key order), used for files and hashing.
  std::string to_json() const;
  /// Parse JSON text. An optional "preset" key seeds the defaults; other keys override it.
  static SigmaConfig from_json(std::string_view text);
  static SigmaConfig load(const std::string& path);

  /// 16 hex digits of FNV-1a over to_json().
  std::string hash() const;

  friend bool operator==(const SigmaConfig&, const SigmaConfig&) = default;
};

}  // namespace sigma
