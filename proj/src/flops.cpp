#include "sigma/flops.hpp"

#include <cmath>

#include "sigma/blocks.hpp"
#include "sigma/model.hpp"

namespace sigma {

void FlopReport::add(std::string name, double flops) { terms_.push_back({std::move(name), flops}); }

void FlopReport::merge(const FlopReport& other, std::string_view prefix) {
  for (const auto& t : other.terms_) terms_.push_back({std::string(prefix) + "." + t.name, t.flops});
}

void FlopReport::scale(double factor) {
  for (auto& t : terms_) t.flops *= factor;
}

double FlopReport::total() const {
  double sum = 0;
  for (const auto& t : terms_) sum += t.flops;
  return sum;
}

double FlopReport::total_matching(std::string_view needle) const {
  double sum = 0;
  for (const auto& t : terms_) {
    if (t.name.find(needle) != std::string::npos) sum += t.flops;
  }
  return sum;
}

namespace flops {

namespace {

double dt_rank_for(double channels) {
  return static_cast<double>(SsmDims::default_dt_rank(static_cast<Index>(channels)));
}

}  // namespace

double linear(double tokens, double in, double out) { return tokens * in * out; }

double depthwise_conv(double tokens, double channels, double kernel) { return tokens * channels * kernel * kernel; }

double layer_norm(double tokens, double channels) {
  // (x - mean) * rstd * gamma: two multiplies per element, one rsqrt per row.
  return 2 * tokens * channels + tokens;
}

FlopReport selection(double length, double channels, double state, double dt_rank) {
  FlopReport r;
  r.add("bc_proj", 2 * linear(length, channels, state));
  r.add("dt_proj", linear(length, channels, dt_rank) + linear(length, dt_rank, channels));
  r.add("dt_softplus", length * channels);
  return r;
}

FlopReport scan(double length, double channels, double state) {
  FlopReport r;
  r.add("recurrence", kScanPerState * length * channels * state);
  r.add("input_skip", kScanPerChannel * length * channels);
  return r;
}

FlopReport selective_scan(double length, double channels, double state, double dt_rank) {
  FlopReport r;
  r.merge(selection(length, channels, state, dt_rank), "selection");
  r.merge(scan(length, channels, state), "scan");
  return r;
}

FlopReport mixer(double height, double width, double channels, double state) {
  const double T = height * width, C = channels, E = kExpansion * C;
  FlopReport r;
  r.add("norm", layer_norm(T, C));
  r.add("in_proj", linear(T, C, E));
  r.add("gate_proj", linear(T, C, E));
  r.add("dwconv", depthwise_conv(T, E));
  r.add("silu", 2 * T * E * 2);
  for (int d = 0; d < 4; ++d) {
    r.merge(selective_scan(T, E, state, dt_rank_for(C)), "dir" + std::to_string(d));
  }
  r.add("gate_mul", T * E);
  r.add("out_proj", linear(T, E, C));
  return r;
}

FlopReport vssb(double height, double width, double channels, double state) {
  return mixer(height, width, channels, state);
}

FlopReport cavssb(double height, double width, double channels, double state) {
  const double T = height * width, C = channels;
  const double hidden = static_cast<double>(std::max<Index>(1, static_cast<Index>(C) / kAttentionReduction));
  FlopReport r;
  r.merge(mixer(height, width, channels, state), "mixer");
  r.add("ca_pool", C);  // the average's divide; max is free
  r.add("ca_mlp", 2 * (linear(1, C, hidden) + linear(1, hidden, C)));
  r.add("ca_sigmoid", C);
  r.add("ca_apply", T * C);
  return r;
}

FlopReport cromb(double height, double width, double channels, double state) {
  FlopReport r;
  r.merge(mixer(height, width, channels, state), "rgb");
  r.merge(mixer(height, width, channels, state), "x");
  return r;
}

namespace {

void concat_branch_terms(FlopReport& r, double T, double C, double E) {
  r.add("in_proj", 2 * linear(T, C, E));
  r.add("dwconv", 2 * depthwise_conv(T, E));
}

void merge_terms(FlopReport& r, double T, double C, double E) {
  r.add("scaling", 2 * T * E);
  r.add("out_proj", linear(T, 2 * E, C));
}

}  // namespace

FlopReport conmb(double height, double width, double channels, double state) {
  const double T = height * width, C = channels, E = kExpansion * C;
  FlopReport r;
  concat_branch_terms(r, T, C, E);
  r.merge(selective_scan(2 * T, E, state, dt_rank_for(C)), "concat_scan");
  r.merge(selective_scan(2 * T, E, state, dt_rank_for(C)), "inverse_scan");
  merge_terms(r, T, C, E);
  return r;
}

FlopReport consa(double height, double width, double channels) {
  const double T = height * width, C = channels, E = kExpansion * C, L = 2 * T;
  FlopReport r;
  concat_branch_terms(r, T, C, E);
  r.add("qkv_proj", 3 * linear(L, E, E));
  r.add("attn_scores", L * L * E);
  r.add("attn_scale", L * L);
  r.add("attn_softmax", 2 * L * L);
  r.add("attn_values", L * L * E);
  r.add("attn_out_proj", linear(L, E, E));
  merge_terms(r, T, C, E);
  return r;
}

FlopReport stem(double height, double width, double out_channels) {
  const double T = (height / kPatchSize) * (width / kPatchSize);
  FlopReport r;
  r.add("patch_embed", linear(T, kPatchSize * kPatchSize * 3, out_channels));
  r.add("norm", layer_norm(T, out_channels));
  return r;
}

FlopReport downsample(double height, double width, double channels) {
  const double T = (height / 2) * (width / 2);
  FlopReport r;
  r.add("norm", layer_norm(T, 4 * channels));
  r.add("reduce", linear(T, 4 * channels, 2 * channels));
  return r;
}

FlopReport model(const SigmaConfig& cfg, Index height, Index width) {
  cfg.validate();
  check_input_extent({height, width, 3}, "count_flops");
  const double N = static_cast<double>(cfg.state_size);
  std::array<double, kNumStages> h{}, w{}, c{};
  for (std::size_t k = 0; k < kNumStages; ++k) {
    const double f = static_cast<double>(Index{kPatchSize} << k);
    h[k] = static_cast<double>(height) / f;
    w[k] = static_cast<double>(width) / f;
    c[k] = static_cast<double>(cfg.stage_dims[k]);
  }

  FlopReport encoder;
  encoder.merge(stem(static_cast<double>(height), static_cast<double>(width), c[0]), "stem");
  for (std::size_t k = 0; k < kNumStages; ++k) {
    const std::string stage = "stage" + std::to_string(k);
    if (k > 0) encoder.merge(downsample(h[k - 1], w[k - 1], c[k - 1]), stage + ".downsample");
    for (Index b = 0; b < cfg.stage_depths[k]; ++b) {
      encoder.merge(vssb(h[k], w[k], c[k], N), stage + ".block" + std::to_string(b));
    }
  }

  FlopReport r;
  r.merge(encoder, "encoder.rgb");
  r.merge(encoder, "encoder.x");

  for (std::size_t k = 0; k < kNumStages; ++k) {
    const std::string level = "fusion.level" + std::to_string(k);
    const double T = h[k] * w[k];
    switch (cfg.fusion_mode) {
      case FusionMode::Sum:
        break;
      case FusionMode::CrombOnly:
        r.merge(cromb(h[k], w[k], c[k], N), level + ".cromb");
        r.add(level + ".average", T * c[k]);
        break;
      case FusionMode::ConmbOnly:
        r.merge(conmb(h[k], w[k], c[k], N), level + ".conmb");
        break;
      case FusionMode::Full:
        r.merge(cromb(h[k], w[k], c[k], N), level + ".cromb");
        r.merge(conmb(h[k], w[k], c[k], N), level + ".conmb");
        break;
    }
  }

  if (cfg.decoder_kind == DecoderKind::Cavssb) {
    for (std::size_t g = 0; g < kNumDecoderGroups; ++g) {
      const std::size_t level = kNumStages - 2 - g;
      const std::string group = "decoder.group" + std::to_string(g);
      r.add(group + ".proj", linear(h[level + 1] * w[level + 1], c[level + 1], c[level]));
      r.add(group + ".upsample", 4 * h[level] * w[level] * c[level]);
      for (Index b = 0; b < cfg.decoder_depths[g]; ++b) {
        r.merge(cavssb(h[level], w[level], c[level], N), group + ".block" + std::to_string(b));
      }
    }
  } else {
    for (std::size_t k = 0; k < kNumStages; ++k) {
      const std::string lvl = "decoder.level" + std::to_string(k);
      r.add(lvl + ".proj", linear(h[k] * w[k], c[k], c[0]));
      if (k > 0) r.add(lvl + ".upsample", 4 * h[0] * w[0] * c[0]);
    }
  }

  const double T1 = h[0] * w[0];
  const double K = static_cast<double>(cfg.num_classes);
  r.add("classifier.hidden", linear(T1, c[0], c[0]));
  r.add("classifier.out", linear(T1, c[0], K));
  r.add("predict.upsample", 4 * static_cast<double>(height) * static_cast<double>(width) * K);
  return r;
}

}  // namespace flops
}  // namespace sigma
