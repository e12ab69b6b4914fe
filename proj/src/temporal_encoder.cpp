#include "proclip/temporal_encoder.hpp"

#include <algorithm>
#include <stdexcept>

namespace proclip {

EncoderParams make_encoder(ParamStore& store, CounterRng& rng, Eigen::Index raw_dim, Eigen::Index dim,
                           DepthRule rule) {
  if (rule.short_depth < 1 || rule.long_depth < 1) throw std::invalid_argument("encoder: depths must be >= 1");
  EncoderParams p;
  p.depth_rule = rule;
  p.projection = make_linear(store, rng, "encoder", "encoder.projection", raw_dim, dim);
  const int depth = std::max(rule.short_depth, rule.long_depth);
  for (int i = 0; i < depth; ++i) {
    p.layers.push_back(
        make_transformer_layer(store, rng, "encoder", "encoder.layer" + std::to_string(i), dim, 1, 4 * dim));
  }
  return p;
}

Var project_frames(const ParamStore& store, const EncoderParams& p, const Var& raw) {
  return linear(store, p.projection, raw);
}

Var add_positional(const Var& x) { return add(x, constant(sinusoidal_positions(x.rows(), x.cols()))); }

Var self_attention_layer(const ParamStore& store, const TransformerLayerParams& layer, const Var& x,
                         Matrix* attention) {
  std::vector<Matrix> weights;
  Var out = transformer_layer(store, layer, x, attention ? &weights : nullptr);
  if (attention) *attention = std::move(weights.front());
  return out;
}

Var encode_temporal(const ParamStore& store, const EncoderParams& p, const Var& x, double duration_s,
                    TemporalTrace* trace) {
  if (duration_s < 0) throw std::invalid_argument("encode_temporal: negative duration");
  const int depth = p.depth_rule.depth_for(duration_s);
  if (depth > static_cast<int>(p.layers.size())) throw std::invalid_argument("encode_temporal: too few layers");
  Var h = x;
  for (int i = 0; i < depth; ++i) {
    Matrix attn;
    h = self_attention_layer(store, p.layers[i], h, trace ? &attn : nullptr);
    if (trace) trace->attention.push_back(std::move(attn));
  }
  if (trace) trace->layers_applied = depth;
  return h;
}

Var encode_frames(const ParamStore& store, const EncoderParams& p, const Var& raw, double duration_s,
                  TemporalTrace* trace) {
  return encode_temporal(store, p, add_positional(project_frames(store, p, raw)), duration_s, trace);
}

}  // namespace proclip
