#pragma once

// Full network: Siamese encoder, per-level fusion, channel-aware decoder and
// classifier.
//
// Decoder wiring (cavssb kind), starting from the fused level-4 map:
//   for each of the three groups: project to the next level's width,
//   upsample x2, add the fused skip of that level, then run the group's CAVSSB
//   blocks at that width.
// The mlp kind projects every fused level to C1, upsamples to 1/4 resolution
// and sums.

#include <array>
#include <cstdint>
#include <vector>

#include "sigma/blocks.hpp"
#include "sigma/config.hpp"
#include "sigma/fusion.hpp"

namespace sigma {

template <typename S>
using StageFeatures = std::array<FeatureMap<S>, kNumStages>;

inline MixerDims mixer_dims(const SigmaConfig& cfg, Index stage) {
  return {cfg.stage_dims[static_cast<std::size_t>(stage)], cfg.state_size};
}

template <typename S>
struct EncoderWeights {
  StemWeights<S> stem;
  std::array<std::vector<VssbWeights<S>>, kNumStages> stages;
  std::array<DownsampleWeights<S>, kNumStages - 1> downsample;

  template <class V>
  void visit(V& v, const SigmaConfig& cfg) {
    {
      ParamScope scope(v, "stem");
      stem.visit(v, StemDims{3, cfg.stage_dims[0]});
    }
    for (std::size_t k = 0; k < stages.size(); ++k) {
      ParamScope stage_scope(v, "stage", k);
      stages[k].resize(static_cast<std::size_t>(cfg.stage_depths[k]));
      for (std::size_t b = 0; b < stages[k].size(); ++b) {
        ParamScope block_scope(v, "block", b);
        stages[k][b].visit(v, mixer_dims(cfg, static_cast<Index>(k)));
      }
      if (k + 1 < stages.size()) {
        ParamScope ds_scope(v, "downsample");
        downsample[k].visit(v, DownsampleDims{cfg.stage_dims[k]});
      }
    }
  }
};

template <typename S>
struct FusionLevelWeights {
  CrombWeights<S> cromb;  // used by full / cromb_only
  ConmbWeights<S> conmb;  // used by full / conmb_only

  template <class V>
  void visit(V& v, const SigmaConfig& cfg, Index level) {
    const Index C = cfg.stage_dims[static_cast<std::size_t>(level)];
    if (cfg.uses_cromb()) {
      ParamScope scope(v, "cromb");
      cromb.visit(v, MixerDims{C, cfg.state_size});
    }
    if (cfg.uses_conmb()) {
      ParamScope scope(v, "conmb");
      conmb.visit(v, FusionDims{C, cfg.state_size});
    }
  }
};

template <typename S>
struct ProjectionWeights {
  DenseArray<S> w;  // [in, out]
  DenseArray<S> b;  // [out]

  template <class V>
  void visit(V& v, Index in, Index out) {
    v.param("w", w, {in, out}, ParamKind::Projection);
    v.param("b", b, {out}, ParamKind::Bias);
  }

  DenseArray<S> operator()(const DenseArray<S>& x) const { return linear(x, w, b); }
};

template <typename S>
struct DecoderGroupWeights {
  ProjectionWeights<S> proj;  // C_{level+1} -> C_level
  std::vector<CavssbWeights<S>> blocks;
};

template <typename S>
struct DecoderWeights {
  std::array<DecoderGroupWeights<S>, kNumDecoderGroups> groups;  // cavssb kind
  std::array<ProjectionWeights<S>, kNumStages> level_proj;       // mlp kind

  template <class V>
  void visit(V& v, const SigmaConfig& cfg) {
    if (cfg.decoder_kind == DecoderKind::Cavssb) {
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const std::size_t level = kNumStages - 2 - g;  // target level of group g
        ParamScope scope(v, "group", g);
        {
          ParamScope proj_scope(v, "proj");
          groups[g].proj.visit(v, cfg.stage_dims[level + 1], cfg.stage_dims[level]);
        }
        groups[g].blocks.resize(static_cast<std::size_t>(cfg.decoder_depths[g]));
        for (std::size_t b = 0; b < groups[g].blocks.size(); ++b) {
          ParamScope block_scope(v, "block", b);
          groups[g].blocks[b].visit(v, CavssbDims{MixerDims{cfg.stage_dims[level], cfg.state_size}});
        }
      }
    } else {
      for (std::size_t k = 0; k < level_proj.size(); ++k) {
        ParamScope scope(v, "level", k);
        level_proj[k].visit(v, cfg.stage_dims[k], cfg.stage_dims[0]);
      }
    }
  }
};

/// Per-pixel MLP: C1 -> C1 (ReLU) -> num_classes.
template <typename S>
struct ClassifierWeights {
  ProjectionWeights<S> hidden;
  ProjectionWeights<S> out;

  template <class V>
  void visit(V& v, const SigmaConfig& cfg) {
    {
      ParamScope scope(v, "hidden");
      hidden.visit(v, cfg.stage_dims[0], cfg.stage_dims[0]);
    }
    ParamScope scope(v, "out");
    out.visit(v, cfg.stage_dims[0], cfg.num_classes);
  }
};

template <typename S>
struct SigmaWeights {
  EncoderWeights<S> encoder;
  std::array<FusionLevelWeights<S>, kNumStages> fusion;
  DecoderWeights<S> decoder;
  ClassifierWeights<S> classifier;

  template <class V>
  void visit(V& v, const SigmaConfig& cfg) {
    {
      ParamScope scope(v, "encoder");
      encoder.visit(v, cfg);
    }
    for (std::size_t k = 0; k < fusion.size(); ++k) {
      ParamScope scope(v, "fusion.level", k);
      fusion[k].visit(v, cfg, static_cast<Index>(k));
    }
    {
      ParamScope scope(v, "decoder");
      decoder.visit(v, cfg);
    }
    ParamScope scope(v, "classifier");
    classifier.visit(v, cfg);
  }
};

/// Parameter layout for `cfg`, in visit order.
inline std::vector<ParamEntry> model_layout(const SigmaConfig& cfg) {
  cfg.validate();
  return collect_layout<SigmaWeights<float>>(cfg);
}

/// Exact number of scalar parameters.
inline Index count_params(const SigmaConfig& cfg) {
  Index n = 0;
  for (const auto& e : model_layout(cfg)) n += shape_numel(e.shape);
  return n;
}

template <typename S>
SigmaWeights<S> init_weights(const SigmaConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return random_weights<SigmaWeights<S>>(cfg, seed);
}

inline void check_input_extent(const Shape& s, const char* op) {
  require_rank(s, 3, op);
  if (s[2] != 3) throw DimensionError(std::string(op) + ": expected 3 input channels, got " + std::to_string(s[2]));
  if (s[0] < kInputMultiple || s[1] < kInputMultiple || s[0] % kInputMultiple != 0 || s[1] % kInputMultiple != 0) {
    throw ConfigError(std::string(op) + ": input extent " + std::to_string(s[0]) + "x" + std::to_string(s[1]) +
                      " must be a positive multiple of 32");
  }
}

/// One encoder branch: stem, then VSSB stages separated by patch merging.
template <typename S>
StageFeatures<S> encode(const DenseArray<S>& image, const EncoderWeights<S>& w) {
  check_input_extent(image.shape(), "encode");
  StageFeatures<S> out;
  FeatureMap<S> f = patch_stem(image, w.stem);
  for (std::size_t k = 0; k < kNumStages; ++k) {
    if (k > 0) f = downsample(f, w.downsample[k - 1]);
    for (const auto& block : w.stages[k]) f = vssb(f, block);
    out[k] = f;
  }
  return out;
}

/// Both modalities through the same encoder weights.
template <typename S>
std::pair<StageFeatures<S>, StageFeatures<S>> encode_siamese(const DenseArray<S>& rgb, const DenseArray<S>& x,
                                                             const EncoderWeights<S>& w) {
  require_same_shape(rgb.shape(), x.shape(), "encode_siamese");
  return {encode(rgb, w), encode(x, w)};
}

template <typename S>
FeatureMap<S> fuse_level(const FeatureMap<S>& rgb, const FeatureMap<S>& x, const FusionLevelWeights<S>& w,
                         const SigmaConfig& cfg) {
  require_same_shape(rgb.shape(), x.shape(), "fuse_level");
  switch (cfg.fusion_mode) {
    case FusionMode::Sum:
      return rgb + x;
    case FusionMode::ConmbOnly:
      return conmb(ModalityPair<S>{rgb, x}, w.conmb);
    case FusionMode::CrombOnly: {
      const ModalityPair<S> enhanced = cromb(ModalityPair<S>{rgb, x}, w.cromb, cfg.cross_mode);
      return S(0.5) * (enhanced.rgb + enhanced.x);
    }
    case FusionMode::Full:
      return conmb(cromb(ModalityPair<S>{rgb, x}, w.cromb, cfg.cross_mode), w.conmb);
  }
  throw ConfigError("fuse_level: unknown fusion mode");
}

template <typename S>
StageFeatures<S> fuse_levels(const StageFeatures<S>& rgb, const StageFeatures<S>& x,
                             const std::array<FusionLevelWeights<S>, kNumStages>& w, const SigmaConfig& cfg) {
  StageFeatures<S> out;
  for (std::size_t k = 0; k < kNumStages; ++k) out[k] = fuse_level(rgb[k], x[k], w[k], cfg);
  return out;
}

template <typename S>
FeatureMap<S> classify(const FeatureMap<S>& f, const ClassifierWeights<S>& w) {
  return w.out(relu(w.hidden(f)));
}

/// Fused pyramid -> logits at 1/4 input resolution.
template <typename S>
DenseArray<S> decode(const StageFeatures<S>& fused, const DecoderWeights<S>& w, const ClassifierWeights<S>& cls,
                     const SigmaConfig& cfg) {
  FeatureMap<S> f;
  if (cfg.decoder_kind == DecoderKind::Cavssb) {
    f = fused[kNumStages - 1];
    for (std::size_t g = 0; g < kNumDecoderGroups; ++g) {
      const std::size_t level = kNumStages - 2 - g;
      f = upsample_bilinear(w.groups[g].proj(f), Index{2}) + fused[level];
      for (const auto& block : w.groups[g].blocks) f = cavssb(f, block);
    }
  } else {
    f = w.level_proj[0](fused[0]);
    for (std::size_t k = 1; k < kNumStages; ++k) {
      f += upsample_bilinear(w.level_proj[k](fused[k]), Index{1} << k);
    }
  }
  return classify(f, cls);
}

template <typename S>
DenseArray<S> forward_logits(const DenseArray<S>& rgb, const DenseArray<S>& x, const SigmaWeights<S>& w,
                             const SigmaConfig& cfg) {
  const auto [pyr_rgb, pyr_x] = encode_siamese(rgb, x, w.encoder);
  return decode(fuse_levels(pyr_rgb, pyr_x, w.fusion, cfg), w.decoder, w.classifier, cfg);
}

/// Single-modality reference path: encoder and decoder with no fusion stage.
template <typename S>
DenseArray<S> rgb_only_logits(const DenseArray<S>& rgb, const SigmaWeights<S>& w, const SigmaConfig& cfg) {
  return decode(encode(rgb, w.encoder), w.decoder, w.classifier, cfg);
}

struct SegmentationMap {
  Index height = 0;
  Index width = 0;
  Index num_classes = 0;
  std::vector<std::int32_t> labels;  // row-major, each < num_classes

  std::int32_t at(Index i, Index j) const { return labels[static_cast<std::size_t>(i * width + j)]; }

  void validate() const {
    if (static_cast<Index>(labels.size()) != height * width) throw DimensionError("SegmentationMap: size mismatch");
    for (auto l : labels) {
      if (l < 0 || l >= num_classes) throw DomainError("SegmentationMap: label out of range");
    }
  }

  friend bool operator==(const SegmentationMap&, const SegmentationMap&) = default;
};

/// Per-pixel argmax over the last axis; ties go to the lowest class index.
template <typename S>
SegmentationMap argmax_labels(const DenseArray<S>& logits) {
  require_rank(logits.shape(), 3, "argmax_labels");
  SegmentationMap map{logits.dim(0), logits.dim(1), logits.dim(2), {}};
  const Index K = logits.dim(2);
  map.labels.resize(static_cast<std::size_t>(map.height * map.width));
  for (Index p = 0; p < map.height * map.width; ++p) {
    const S* row = logits.data() + p * K;
    Index best = 0;
    for (Index k = 1; k < K; ++k) {
      if (row[k] > row[best]) best = k;
    }
    map.labels[static_cast<std::size_t>(p)] = static_cast<std::int32_t>(best);
  }
  return map;
}

/// Full-resolution prediction: logits upsampled x4 to the input size, then argmax.
template <typename S>
SegmentationMap predict_from_logits(const DenseArray<S>& logits) {
  return argmax_labels(upsample_bilinear(logits, Index{kPatchSize}));
}

template <typename S>
SegmentationMap predict(const DenseArray<S>& rgb, const DenseArray<S>& x, const SigmaWeights<S>& w,
                        const SigmaConfig& cfg) {
  return predict_from_logits(forward_logits(rgb, x, w, cfg));
}

}  // namespace sigma
