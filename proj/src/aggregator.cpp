#include "proclip/aggregator.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace proclip {

AggregatorParams make_aggregator(ParamStore& store, CounterRng& rng, Eigen::Index dim) {
  AggregatorParams p;
  p.norm = make_layer_norm(store, "aggregator", "aggregator.norm", dim);
  p.attention = make_attention(store, rng, "aggregator", "aggregator.attn", dim, 1);
  store[p.attention.output.weight].mutable_value().setZero();
  store[p.attention.output.bias].mutable_value().setZero();
  return p;
}

Var weight_frames(const Var& clip_selected, const Var& alpha) {
  if (alpha.cols() != 1 || alpha.rows() != clip_selected.rows()) {
    throw std::invalid_argument("weight_frames: alpha length differs from selected frame count");
  }
  return scale_rows(clip_selected, alpha);
}

Var aggregate_video(const ParamStore& store, const AggregatorParams& p, const Var& weighted, Matrix* attention) {
  if (weighted.rows() < 1) throw std::invalid_argument("aggregate_video: no frames");
  if (weighted.cols() != store[p.norm.gamma].cols()) throw std::invalid_argument("aggregate_video: width mismatch");
  std::vector<Matrix> weights;
  const Var h = add(weighted, self_attention(store, p.attention, layer_norm(store, p.norm, weighted),
                                             attention ? &weights : nullptr));
  if (attention) *attention = std::move(weights.front());
  return l2_normalize_rows(mean_rows(h));
}

double cosine_similarity(const Eigen::Ref<const Eigen::RowVectorXd>& v,
                         const Eigen::Ref<const Eigen::RowVectorXd>& t) {
  if (v.size() != t.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
  const double nv = v.norm();
  const double nt = t.norm();
  if (!(nv > 0) || !(nt > 0)) throw std::domain_error("cosine_similarity: zero vector");
  return std::clamp(v.dot(t) / (nv * nt), -1.0, 1.0);
}

Var cosine_similarity(const Var& v, const Var& t) {
  return matmul_nt(l2_normalize_rows(v), l2_normalize_rows(t));
}

}  // namespace proclip
