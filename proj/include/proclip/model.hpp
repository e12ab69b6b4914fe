#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "proclip/aggregator.hpp"
#include "proclip/frame_sampler.hpp"
#include "proclip/params.hpp"
#include "proclip/prompt_attention.hpp"
#include "proclip/pruner.hpp"
#include "proclip/temporal_encoder.hpp"

namespace proclip {

struct ModelConfig {
  std::uint32_t raw_dim = 32;
  std::uint32_t dim = 32;
  std::uint32_t scorer_hidden = 32;
  DepthRule depth_rule;
  std::uint32_t distill_heads = 8;
  std::uint32_t distill_ff_width = 256;
  std::uint64_t seed = 1;
};

// Parameter groups, in checkpoint order.
inline constexpr std::string_view kEncoderGroup = "encoder";
inline constexpr std::string_view kGateGroup = "gate";
inline constexpr std::string_view kScorerGroup = "scorer";
inline constexpr std::string_view kAggregatorGroup = "aggregator";
inline constexpr std::string_view kDistillGroup = "distill";

struct ModelParams {
  ModelConfig config;
  ParamStore store;
  EncoderParams encoder;
  GateParams gate;
  ScorerParams scorer;
  AggregatorParams aggregator;
  DistillParams distill;

  // Seeded initialization; every value is f32-representable. All groups
  // start frozen (requires_grad = false).
  static ModelParams init(const ModelConfig& config);
};

// "PCLW", u16 version, u16 flags, config block, u32 tensor count, then per
// tensor: u16-prefixed "group/name", u32 rows, u32 cols, f32 payload.
std::string serialize_checkpoint(const ModelParams& model);
ModelParams parse_checkpoint(std::string_view data);
void write_checkpoint(const ModelParams& model, const std::filesystem::path& path);
ModelParams read_checkpoint(const std::filesystem::path& path);

// FNV-1a over the serialized checkpoint.
std::uint64_t model_hash(const ModelParams& model);

bool bitwise_equal(const ModelParams& a, const ModelParams& b);
// True when every tensor of `group` has identical bits in both models.
bool group_bitwise_equal(const ModelParams& a, const ModelParams& b, std::string_view group);

}  // namespace proclip
