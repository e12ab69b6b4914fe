#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "proclip/corpus.hpp"
#include "proclip/model.hpp"

namespace proclip {

enum class OptimizerKind { kGradientDescent, kAdam };

struct TrainConfig {
  int batch_size = 8;
  int epochs = 50;
  double backbone_lr = 0.5;  // temporal encoder
  double head_lr = 2.0;      // gate, scorer, aggregator
  OptimizerKind retrieval_optimizer = OptimizerKind::kGradientDescent;
  int k_frames = 12;
  AnnealSchedule anneal;
  double clip_norm = 1.0;

  int distill_epochs = 40;
  int distill_batch = 10;
  double distill_lr = 5e-3;
  // Unit normalization makes the distillation loss blind to the shared
  // component of the pooled features; per-parameter step scaling escapes
  // that plateau where plain descent stalls.
  OptimizerKind distill_optimizer = OptimizerKind::kAdam;

  std::uint64_t seed = 1;
  // Widths are taken from the corpus; the seed from `seed`.
  ModelConfig model;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double temperature = 0.0;  // 0 when the stage has no selection temperature
};

struct TrainResult {
  ModelParams model;
  std::vector<EpochLog> log;
};

// "epoch,loss,temperature" rows.
std::string training_log_csv(const std::vector<EpochLog>& log);

// Symmetric cross-entropy over a B x B similarity matrix whose diagonal holds
// the positives: half the sum of row-wise and column-wise mean -log softmax.
Var contrastive_loss(const Var& sim);
double contrastive_loss(const Matrix& sim);

// Query batches with pairwise distinct ground-truth videos. Throws when no
// batch of at least two queries can be formed.
std::vector<std::vector<std::size_t>> make_batches(const CorpusBundle& corpus, int batch_size, CounterRng& rng);

// Builds the B x B similarity matrix of one batch on the training path:
// soft top-K mixtures of teacher frames, alpha from the expected scores.
Var batch_similarity(const ModelParams& model, const CorpusBundle& corpus, const std::vector<std::size_t>& batch,
                     int k_frames, double temperature);

// Stage 1: end-to-end training of encoder, gate, scorer and aggregator.
TrainResult train_retrieval_stage(const CorpusBundle& corpus, const TrainConfig& config);
// Stage 2: only the distillation module moves; loss is MSE against the
// teacher video features. The log holds the corpus MSE after each epoch.
TrainResult train_distill_stage(const CorpusBundle& corpus, const ModelParams& model, const TrainConfig& config);

// Frame contexts exactly as the index stores them (f32-rounded).
std::vector<Matrix> frame_contexts(const ModelParams& model, const CorpusBundle& corpus);
double corpus_distill_mse(const ModelParams& model, const std::vector<Matrix>& contexts, const CorpusBundle& corpus);

struct GradCheckSample {
  std::uint64_t seed = 1;
  int dim = 4;
  int frames = 5;
  int words = 3;
  int batch = 3;
  int k = 2;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst_entry;
};

// Registered differentiable blocks, e.g. "encoder_layer", "gate", "contrastive_loss".
std::vector<std::string> registered_blocks();

// Central finite differences against the analytic gradient of every tensor the
// block exposes. Error per entry is |ga - gfd| / max(|ga|, |gfd|, 1e-8).
// `corrupt` scales the largest analytic entry by 1.1 to prove the harness can
// fail. Throws std::invalid_argument for an unknown block.
GradCheckResult grad_check(std::string_view block, const GradCheckSample& sample = {}, double epsilon = 1e-4,
                           bool corrupt = false);

}  // namespace proclip
