#include "proclip/frame_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace proclip {

namespace {

MlpParams make_mlp(ParamStore& store, CounterRng& rng, const std::string& prefix, Eigen::Index dim,
                   Eigen::Index hidden) {
  MlpParams p;
  p.hidden = make_linear(store, rng, "scorer", prefix + ".hidden", dim, hidden);
  p.out = make_linear(store, rng, "scorer", prefix + ".out", hidden, 1);
  return p;
}

// Lowest index among the maxima.
int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (int j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = j;
  }
  return best;
}

}  // namespace

ScorerParams make_scorer(ParamStore& store, CounterRng& rng, Eigen::Index dim, Eigen::Index hidden) {
  ScorerParams p;
  p.frame_head = make_mlp(store, rng, "scorer.frame", dim, hidden);
  p.fused_head = make_mlp(store, rng, "scorer.fused", dim, hidden);
  p.hidden_width = hidden;
  return p;
}

Var mlp(const ParamStore& store, const MlpParams& p, const Var& x) {
  return linear(store, p.out, gelu(linear(store, p.hidden, x)));
}

Var frame_scores(const ParamStore& store, const ScorerParams& p, const Var& frames, const Var& y) {
  if (frames.rows() != y.rows() || frames.cols() != y.cols()) {
    throw std::invalid_argument("frame_scores: frames and y shapes differ");
  }
  const Var logits = mlp(store, p.frame_head, frames);
  const Var relevance = sigmoid(mlp(store, p.fused_head, y));
  return mul(logits, relevance);
}

SelectedFrames topk_infer(const Eigen::VectorXd& scores, int k) {
  const auto n = static_cast<int>(scores.size());
  if (k < 1 || k > n) {
    throw std::invalid_argument("topk_infer: K=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    return scores(a) > scores(b) || (scores(a) == scores(b) && a < b);
  });
  SelectedFrames out;
  out.indices.assign(order.begin(), order.begin() + k);
  std::sort(out.indices.begin(), out.indices.end());
  Eigen::VectorXd selected(k);
  for (int i = 0; i < k; ++i) selected(i) = scores(out.indices[i]);
  const double m = selected.maxCoeff();
  out.alpha = (selected.array() - m).exp();
  out.alpha /= out.alpha.sum();
  out.scores_all = scores;
  return out;
}

SoftSelection hard_topk_train(const Var& scores, int k, double temperature) {
  if (scores.cols() != 1) throw std::invalid_argument("hard_topk_train: scores must be N x 1");
  const auto n = static_cast<int>(scores.rows());
  if (k < 1 || k > n) throw std::invalid_argument("hard_topk_train: K outside [1, N]");
  if (!(temperature > 0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("hard_topk_train: temperature must be positive and finite");
  }
  const Var row_scores = transpose(scores);  // 1 x N
  SoftSelection out;
  out.temperature = temperature;
  Matrix mask = Matrix::Zero(1, n);
  std::vector<Var> rows;
  for (int r = 0; r < k; ++r) {
    const Var logits = scale(add(row_scores, constant(mask)), 1.0 / temperature);
    const Var row = softmax_rows(logits);
    // The pattern follows the suppressed scores, so claimed indices stay
    // distinct even when a very flat row rounds several weights equal.
    const int claimed = argmax_lowest(row_scores.value().row(0) + mask.row(0));
    out.claimed.push_back(claimed);
    mask(0, claimed) -= kSuppression;
    rows.push_back(row);
  }
  out.weights = concat_rows(rows);
  return out;
}

double anneal_temperature(long step, const AnnealSchedule& schedule) {
  if (step < 0) throw std::invalid_argument("anneal_temperature: negative step");
  return schedule.initial * std::exp(-schedule.decay * static_cast<double>(step));
}

}  // namespace proclip
