#pragma once

#include <string>
#include <vector>

#include "proclip/params.hpp"

namespace proclip {

// Depth is a pure threshold function of duration; the boundary belongs to the
// short branch.
struct DepthRule {
  int short_depth = 3;
  int long_depth = 5;
  double threshold_s = 60.0;

  int depth_for(double duration_s) const { return duration_s <= threshold_s ? short_depth : long_depth; }
};

// One bank of max(short, long) layers; short videos use its prefix.
struct EncoderParams {
  LinearParams projection;  // D_v -> D
  std::vector<TransformerLayerParams> layers;
  DepthRule depth_rule;
};

struct FrameContextMatrix {
  Matrix rows;  // N x D
  std::string source_video;
};

EncoderParams make_encoder(ParamStore& store, CounterRng& rng, Eigen::Index raw_dim, Eigen::Index dim,
                           DepthRule rule = {});

Var project_frames(const ParamStore& store, const EncoderParams& p, const Var& raw);
Var add_positional(const Var& x);
// Single-head pre-norm block; `attention` receives the N x N softmax weights.
Var self_attention_layer(const ParamStore& store, const TransformerLayerParams& layer, const Var& x,
                         Matrix* attention = nullptr);

struct TemporalTrace {
  int layers_applied = 0;
  std::vector<Matrix> attention;  // one per applied layer
};

Var encode_temporal(const ParamStore& store, const EncoderParams& p, const Var& x, double duration_s,
                    TemporalTrace* trace = nullptr);

// project -> positions -> depth-selected stack.
Var encode_frames(const ParamStore& store, const EncoderParams& p, const Var& raw, double duration_s,
                  TemporalTrace* trace = nullptr);

}  // namespace proclip
