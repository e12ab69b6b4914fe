#pragma once

#include <string>
#include <vector>

#include "proclip/params.hpp"

namespace proclip {

// Input projection, sinusoidal positions, three multi-head pre-norm encoder
// layers, mean pool over frames, unit normalization.
struct DistillParams {
  LinearParams input;
  std::vector<TransformerLayerParams> layers;
  int heads = 8;
  Eigen::Index ff_width = 256;
};

inline constexpr int kDistillLayers = 3;

DistillParams make_distill(ParamStore& store, CounterRng& rng, Eigen::Index dim, int heads = 8,
                           Eigen::Index ff_width = 256);

// 1 x D unit vector phi(v).
Var distill_forward(const ParamStore& store, const DistillParams& p, const Var& frame_context);

// Mean over rows of the squared Euclidean distance; B x D each.
Var mse_distill_loss(const Var& student, const Var& teacher);
double mse_distill_loss(const Matrix& student, const Matrix& teacher);

struct CandidateSet {
  std::vector<std::string> video_ids;  // descending coarse score
  std::vector<double> coarse_scores;
  std::vector<std::size_t> positions;  // row of each candidate in the input table
  double k_percent = 100.0;
};

// ceil(k_percent / 100 * total), exact for integral k_percent.
std::size_t retained_count(std::size_t total, double k_percent);

// Full stage-1 ordering of every video: descending cosine, ties by id.
struct CoarseRanking {
  std::vector<std::size_t> order;
  Eigen::VectorXd scores;  // indexed by table row
};

CoarseRanking coarse_rank(const Eigen::RowVectorXd& sentence, const std::vector<std::string>& ids,
                          const Matrix& distilled);

// R(v, q) = cosine(phi(v), sentence); keeps the top ceil(k% * M), ties by id.
CandidateSet prune_candidates(const Eigen::RowVectorXd& sentence, const std::vector<std::string>& ids,
                              const Matrix& distilled, double k_percent);

}  // namespace proclip
