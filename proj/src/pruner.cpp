#include "proclip/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace proclip {

DistillParams make_distill(ParamStore& store, CounterRng& rng, Eigen::Index dim, int heads, Eigen::Index ff_width) {
  if (heads < 1 || dim % heads != 0) throw std::invalid_argument("distill: head count must divide D");
  DistillParams p;
  p.heads = heads;
  p.ff_width = ff_width;
  p.input = make_linear(store, rng, "distill", "distill.input", dim, dim);
  for (int i = 0; i < kDistillLayers; ++i) {
    p.layers.push_back(make_transformer_layer(store, rng, "distill", "distill.layer" + std::to_string(i), dim,
                                              heads, ff_width));
  }
  return p;
}

Var distill_forward(const ParamStore& store, const DistillParams& p, const Var& frame_context) {
  Var h = linear(store, p.input, frame_context);
  h = add(h, constant(sinusoidal_positions(h.rows(), h.cols())));
  for (const auto& layer : p.layers) h = transformer_layer(store, layer, h);
  return l2_normalize_rows(mean_rows(h));
}

Var mse_distill_loss(const Var& student, const Var& teacher) {
  if (student.rows() != teacher.rows() || student.cols() != teacher.cols()) {
    throw std::invalid_argument("mse_distill_loss: dimension mismatch");
  }
  const Var diff = sub(student, teacher);
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(student.rows()));
}

double mse_distill_loss(const Matrix& student, const Matrix& teacher) {
  if (student.rows() != teacher.rows() || student.cols() != teacher.cols()) {
    throw std::invalid_argument("mse_distill_loss: dimension mismatch");
  }
  return (student - teacher).squaredNorm() / static_cast<double>(student.rows());
}

std::size_t retained_count(std::size_t total, double k_percent) {
  if (!(k_percent > 0) || k_percent > 100) throw std::invalid_argument("k_percent must be in (0, 100]");
  const double exact = k_percent * static_cast<double>(total) / 100.0;
  const double nearest = std::round(exact);
  const double count = std::abs(exact - nearest) < 1e-9 ? nearest : std::ceil(exact);
  return std::clamp<std::size_t>(static_cast<std::size_t>(count), total == 0 ? 0 : 1, total);
}

CoarseRanking coarse_rank(const Eigen::RowVectorXd& sentence, const std::vector<std::string>& ids,
                          const Matrix& distilled) {
  if (ids.empty()) throw std::invalid_argument("prune_candidates: empty corpus");
  if (static_cast<Eigen::Index>(ids.size()) != distilled.rows()) {
    throw std::invalid_argument("prune_candidates: id count differs from embedding rows");
  }
  if (sentence.size() != distilled.cols()) throw std::invalid_argument("prune_candidates: dimension mismatch");
  const double sentence_norm = sentence.norm();
  if (!(sentence_norm > 0)) throw std::domain_error("prune_candidates: zero sentence vector");

  CoarseRanking out;
  out.scores = (distilled * sentence.transpose()) / sentence_norm;
  out.scores.array() /= distilled.rowwise().norm().array();
  out.order.resize(ids.size());
  std::iota(out.order.begin(), out.order.end(), 0);
  std::sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) {
    if (out.scores(a) != out.scores(b)) return out.scores(a) > out.scores(b);
    return ids[a] < ids[b];
  });
  return out;
}

CandidateSet prune_candidates(const Eigen::RowVectorXd& sentence, const std::vector<std::string>& ids,
                              const Matrix& distilled, double k_percent) {
  const std::size_t keep = retained_count(ids.size(), k_percent);
  const CoarseRanking ranking = coarse_rank(sentence, ids, distilled);
  CandidateSet out;
  out.k_percent = k_percent;
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t row = ranking.order[i];
    out.video_ids.push_back(ids[row]);
    out.coarse_scores.push_back(ranking.scores(row));
    out.positions.push_back(row);
  }
  return out;
}

}  // namespace proclip
