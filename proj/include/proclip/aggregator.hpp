#pragma once

#include "proclip/params.hpp"

namespace proclip {

// h = x + Attn(LN(x)) with single-head attention, then mean pool over frames
// and unit normalization. No positions are injected at this stage.
struct AggregatorParams {
  LayerNormParams norm;
  AttentionParams attention;
};

// The output projection starts at zero, so a fresh aggregator returns the
// normalized alpha-weighted mean of its input rows.
AggregatorParams make_aggregator(ParamStore& store, CounterRng& rng, Eigen::Index dim);

// Row k scaled by alpha(k); alpha is K x 1.
Var weight_frames(const Var& clip_selected, const Var& alpha);

// 1 x D unit-norm video embedding. `attention` receives the K x K weights.
Var aggregate_video(const ParamStore& store, const AggregatorParams& p, const Var& weighted,
                    Matrix* attention = nullptr);

double cosine_similarity(const Eigen::Ref<const Eigen::RowVectorXd>& v, const Eigen::Ref<const Eigen::RowVectorXd>& t);
// 1 x 1 cosine of two 1 x D rows.
Var cosine_similarity(const Var& v, const Var& t);

}  // namespace proclip
