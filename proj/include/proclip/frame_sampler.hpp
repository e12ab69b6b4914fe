#pragma once

#include <vector>

#include "proclip/params.hpp"

namespace proclip {

// Two-layer perceptron D -> H -> 1 with GELU hidden activation.
struct MlpParams {
  LinearParams hidden;
  LinearParams out;
};

struct ScorerParams {
  MlpParams frame_head;  // logits on the initial frame features
  MlpParams fused_head;  // relevance (through sigmoid) on the fused features y
  Eigen::Index hidden_width = 0;
};

ScorerParams make_scorer(ParamStore& store, CounterRng& rng, Eigen::Index dim, Eigen::Index hidden);

Var mlp(const ParamStore& store, const MlpParams& p, const Var& x);

// score_j = mlp_frame(frames_j) * sigmoid(mlp_fused(y_j)); N x 1.
Var frame_scores(const ParamStore& store, const ScorerParams& p, const Var& frames, const Var& y);

struct SelectedFrames {
  std::vector<int> indices;  // ascending
  Eigen::VectorXd alpha;     // softmax over the selected scores, same order as indices
  Eigen::VectorXd scores_all;
};

// Exact top-K; ties go to the lower index.
SelectedFrames topk_infer(const Eigen::VectorXd& scores, int k);

// Rows are successive tempered softmaxes; each row suppresses the argmax of
// every earlier row by kSuppression before dividing by the temperature. The
// suppression pattern is treated as a constant (straight-through).
struct SoftSelection {
  Var weights;  // K x N, row-stochastic
  double temperature = 1.0;
  std::vector<int> claimed;  // argmax of each row, in row order
};

inline constexpr double kSuppression = 1e9;

SoftSelection hard_topk_train(const Var& scores, int k, double temperature);

struct AnnealSchedule {
  double initial = 5.0;
  double decay = 0.045;
};

// tau(step) = initial * exp(-decay * step)
double anneal_temperature(long step, const AnnealSchedule& schedule = {});

}  // namespace proclip
