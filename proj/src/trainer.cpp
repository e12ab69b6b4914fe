#include "proclip/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <stdexcept>

namespace proclip {

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,loss,temperature\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", e.epoch, e.loss, e.temperature);
    out += buf;
  }
  return out;
}

Var contrastive_loss(const Var& sim) {
  if (sim.rows() != sim.cols() || sim.rows() < 1) throw std::invalid_argument("contrastive_loss: sim must be square");
  const double inv_b = 1.0 / static_cast<double>(sim.rows());
  const Var video_to_text = sum(diag(log_softmax_rows(sim)));
  const Var text_to_video = sum(diag(log_softmax_rows(transpose(sim))));
  return scale(add(video_to_text, text_to_video), -0.5 * inv_b);
}

double contrastive_loss(const Matrix& sim) {
  if (sim.rows() != sim.cols() || sim.rows() < 1) throw std::invalid_argument("contrastive_loss: sim must be square");
  const Eigen::Index b = sim.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double row_max = sim.row(i).maxCoeff();
    const double col_max = sim.col(i).maxCoeff();
    const double row_lse = row_max + std::log((sim.row(i).array() - row_max).exp().sum());
    const double col_lse = col_max + std::log((sim.col(i).array() - col_max).exp().sum());
    total += (row_lse - sim(i, i)) + (col_lse - sim(i, i));
  }
  return 0.5 * total / static_cast<double>(b);
}

std::vector<std::vector<std::size_t>> make_batches(const CorpusBundle& corpus, int batch_size, CounterRng& rng) {
  if (batch_size < 2) throw std::invalid_argument("batch size must be >= 2");
  std::vector<std::size_t> pending(corpus.queries.size());
  std::iota(pending.begin(), pending.end(), std::size_t{0});
  for (std::size_t i = pending.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(pending[i - 1], pending[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  while (!pending.empty()) {
    std::vector<std::size_t> batch;
    std::set<std::string> videos;
    std::vector<std::size_t> rest;
    for (std::size_t q : pending) {
      const std::string& gt = corpus.queries[q].ground_truth_video;
      if (static_cast<int>(batch.size()) < batch_size && videos.insert(gt).second) {
        batch.push_back(q);
      } else {
        rest.push_back(q);
      }
    }
    if (batch.size() < 2) break;
    batches.push_back(std::move(batch));
    pending = std::move(rest);
  }
  if (batches.empty()) {
    throw std::invalid_argument("batch infeasible: fewer than two queries with distinct ground-truth videos");
  }
  return batches;
}

Var batch_similarity(const ModelParams& model, const CorpusBundle& corpus, const std::vector<std::size_t>& batch,
                     int k_frames, double temperature) {
  const ParamStore& store = model.store;
  std::vector<Var> contexts;
  std::vector<Var> teacher;
  std::vector<Var> words;
  std::vector<Var> sentences;
  std::vector<Var> unit_sentences;
  for (std::size_t q : batch) {
    const QueryRecord& query = corpus.queries[q];
    const auto v = corpus.find_video(query.ground_truth_video);
    if (!v) throw std::invalid_argument("query " + query.id + ": ground truth not in corpus");
    const VideoRecord& video = corpus.videos[*v];
    contexts.push_back(encode_frames(store, model.encoder, Var(video.raw_frames.cast<double>()), video.duration_s));
    teacher.push_back(Var(video.clip_frames.cast<double>()));
    words.push_back(Var(query.words.cast<double>()));
    const Matrix s = query.sentence.cast<double>();
    sentences.push_back(Var(s));
    unit_sentences.push_back(Var(s / s.norm()));
  }

  std::vector<Var> rows;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Var& frames = contexts[i];
    const int k = std::min<int>(k_frames, static_cast<int>(frames.rows()));
    Var row;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const FusionOutput fused = prompt_fusion(store, model.gate, words[j], sentences[j], frames);
      const Var scores = frame_scores(store, model.scorer, frames, fused.y);
      const SoftSelection selection = hard_topk_train(scores, k, temperature);
      const Var mixed = matmul(selection.weights, teacher[i]);
      const Var alpha = transpose(softmax_rows(transpose(matmul(selection.weights, scores))));
      const Var embedding = aggregate_video(store, model.aggregator, weight_frames(mixed, alpha));
      const Var s = matmul_nt(embedding, unit_sentences[j]);
      row = row.defined() ? concat_cols(row, s) : s;
    }
    rows.push_back(row);
  }
  return concat_rows(rows);
}

namespace {

struct GroupRate {
  std::string_view group;
  double rate;
};

// Global-norm clipping, then either a plain gradient step or an Adam step per
// trainable tensor. Values are rounded back to f32 after every update.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::vector<GroupRate> rates, double clip_norm)
      : kind_(kind), rates_(std::move(rates)), clip_norm_(clip_norm) {}

  void step(ModelParams& model) {
    auto& entries = model.store.entries();
    if (first_.empty()) {
      first_.resize(entries.size());
      second_.resize(entries.size());
    }
    double norm_sq = 0.0;
    for (const auto& e : entries) {
      if (e.var.requires_grad()) norm_sq += e.var.grad().squaredNorm();
    }
    const double norm = std::sqrt(norm_sq);
    const double clip = (clip_norm_ > 0 && norm > clip_norm_) ? clip_norm_ / norm : 1.0;
    ++steps_;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& e = entries[i];
      if (!e.var.requires_grad()) continue;
      const double rate = rate_for(e.group);
      if (rate == 0.0) continue;
      const Matrix grad = e.var.grad() * clip;
      if (kind_ == OptimizerKind::kGradientDescent) {
        e.var.mutable_value() -= rate * grad;
        continue;
      }
      Matrix& m = first_[i];
      Matrix& v = second_[i];
      if (m.size() == 0) {
        m = Matrix::Zero(grad.rows(), grad.cols());
        v = m;
      }
      m = kBeta1 * m + (1.0 - kBeta1) * grad;
      v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
      e.var.mutable_value().array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + kAdamEps);
    }
    model.store.round_to_f32();
    model.store.zero_grad();
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kAdamEps = 1e-8;

  double rate_for(std::string_view group) const {
    for (const auto& r : rates_) {
      if (r.group == group) return r.rate;
    }
    return 0.0;
  }

  OptimizerKind kind_;
  std::vector<GroupRate> rates_;
  double clip_norm_;
  long steps_ = 0;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
};

void check_train_config(const TrainConfig& config) {
  if (config.batch_size < 2) throw std::invalid_argument("train: batch size must be >= 2");
  if (config.epochs < 1 || config.distill_epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (!(config.backbone_lr > 0) || !(config.head_lr > 0) || !(config.distill_lr > 0)) {
    throw std::invalid_argument("train: learning rates must be positive");
  }
  if (config.distill_batch < 1) throw std::invalid_argument("train: distill batch must be >= 1");
}

void freeze_all(ModelParams& model) {
  for (const auto& g : model.store.groups()) model.store.set_trainable(g, false);
}

}  // namespace

TrainResult train_retrieval_stage(const CorpusBundle& corpus, const TrainConfig& config) {
  check_train_config(config);
  ModelConfig mc = config.model;
  mc.raw_dim = corpus.dims.raw_dim;
  mc.dim = corpus.dims.dim;
  mc.seed = config.seed;
  TrainResult result{ModelParams::init(mc), {}};
  ModelParams& model = result.model;
  for (auto group : {kEncoderGroup, kGateGroup, kScorerGroup, kAggregatorGroup}) model.store.set_trainable(group, true);
  Optimizer optimizer(config.retrieval_optimizer,
                      {{kEncoderGroup, config.backbone_lr},
                       {kGateGroup, config.head_lr},
                       {kScorerGroup, config.head_lr},
                       {kAggregatorGroup, config.head_lr}},
                      config.clip_norm);

  CounterRng rng(config.seed ^ 0x5452414953484C44ULL);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double tau = anneal_temperature(epoch, config.anneal);
    const auto batches = make_batches(corpus, config.batch_size, rng);
    double total = 0.0;
    for (const auto& batch : batches) {
      const Var loss = contrastive_loss(batch_similarity(model, corpus, batch, config.k_frames, tau));
      total += loss.item();
      loss.backward();
      optimizer.step(model);
    }
    result.log.push_back({epoch + 1, total / static_cast<double>(batches.size()), tau});
  }
  freeze_all(model);
  return result;
}

std::vector<Matrix> frame_contexts(const ModelParams& model, const CorpusBundle& corpus) {
  NoGradGuard no_grad;
  std::vector<Matrix> out;
  out.reserve(corpus.videos.size());
  for (const auto& video : corpus.videos) {
    const Var context = encode_frames(model.store, model.encoder, Var(video.raw_frames.cast<double>()), video.duration_s);
    out.push_back(context.value().cast<float>().cast<double>());
  }
  return out;
}

double corpus_distill_mse(const ModelParams& model, const std::vector<Matrix>& contexts, const CorpusBundle& corpus) {
  NoGradGuard no_grad;
  Matrix student(static_cast<Eigen::Index>(contexts.size()), model.config.dim);
  Matrix teacher(student.rows(), student.cols());
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    student.row(r) = distill_forward(model.store, model.distill, Var(contexts[i])).value();
    teacher.row(r) = corpus.videos[i].teacher_video.cast<double>();
  }
  return mse_distill_loss(student, teacher);
}

TrainResult train_distill_stage(const CorpusBundle& corpus, const ModelParams& model, const TrainConfig& config) {
  check_train_config(config);
  if (corpus.dims.dim != model.config.dim || corpus.dims.raw_dim != model.config.raw_dim) {
    throw std::invalid_argument("train_distill_stage: corpus dims do not match the model");
  }
  TrainResult result{model, {}};
  ModelParams& student = result.model;
  freeze_all(student);
  student.store.set_trainable(kDistillGroup, true);
  Optimizer optimizer(config.distill_optimizer, {{kDistillGroup, config.distill_lr}}, config.clip_norm);

  const std::vector<Matrix> contexts = frame_contexts(student, corpus);
  std::vector<Var> teachers;
  for (const auto& video : corpus.videos) teachers.push_back(Var(Matrix(video.teacher_video.cast<double>())));

  CounterRng rng(config.seed ^ 0x44495354494C4CULL);
  std::vector<std::size_t> order(corpus.videos.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(config.distill_batch);
  for (int epoch = 0; epoch < config.distill_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<Var> phis;
      std::vector<Var> targets;
      for (std::size_t i = start; i < end; ++i) {
        phis.push_back(distill_forward(student.store, student.distill, Var(contexts[order[i]])));
        targets.push_back(teachers[order[i]]);
      }
      const Var loss = mse_distill_loss(concat_rows(phis), concat_rows(targets));
      loss.backward();
      optimizer.step(student);
    }
    result.log.push_back({epoch + 1, corpus_distill_mse(student, contexts, corpus), 0.0});
  }
  freeze_all(student);
  return result;
}

// ---------------------------------------------------------------------------
// Finite-difference harness

namespace {

Matrix random_matrix(CounterRng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.gaussian();
  return m;
}

// A block under test: the tensors whose gradients are checked and a scalar
// objective over them. Objectives are contracted against a small fixed
// projection so that round-off in the finite differences stays far below the
// tolerance even for entries whose true gradient is zero.
struct Probe {
  std::vector<Var> leaves;
  std::vector<std::string> names;
  std::function<Var()> objective;
};

Var project(const Var& out, const Matrix& weights) { return sum(mul(out, constant(weights))); }

void expose_store(ParamStore& store, Probe& probe) {
  for (auto& e : store.entries()) {
    e.var.set_requires_grad(true);
    probe.leaves.push_back(e.var);
    probe.names.push_back(e.group + "/" + e.name);
  }
}

Var leaf(Probe& probe, std::string name, Matrix value) {
  Var v(std::move(value), true);
  probe.leaves.push_back(v);
  probe.names.push_back(std::move(name));
  return v;
}

constexpr double kProjectionScale = 1e-2;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

using ProbeFactory = std::function<Probe(const GradCheckSample&, CounterRng&)>;

const std::vector<std::pair<std::string, ProbeFactory>>& registry() {
  static const std::vector<std::pair<std::string, ProbeFactory>> blocks = {
      {"encoder_layer",
       [](const GradCheckSample& s, CounterRng& rng) {
         auto store = std::make_shared<ParamStore>();
         const auto layer = make_transformer_layer(*store, rng, "encoder", "layer", s.dim, 1, 4 * s.dim);
         Probe p;
         expose_store(*store, p);
         const Var x = leaf(p, "input", random_matrix(rng, s.frames, s.dim));
         const Matrix w = random_matrix(rng, s.frames, s.dim, kProjectionScale);
         p.objective = [store, layer, x, w] { return project(self_attention_layer(*store, layer, x), w); };
         return p;
       }},
      {"encoder",
       [](const GradCheckSample& s, CounterRng& rng) {
         auto store = std::make_shared<ParamStore>();
         const auto enc = make_encoder(*store, rng, s.dim + 1, s.dim);
         Probe p;
         expose_store(*store, p);
         const Var raw = leaf(p, "raw", random_matrix(rng, s.frames, s.dim + 1));
         const Matrix w = random_matrix(rng, s.frames, s.dim, kProjectionScale);
         p.objective = [store, enc, raw, w] { return project(encode_frames(*store, enc, raw, 90.0), w); };
         return p;
       }},
      {"word_attention",
       [](const GradCheckSample& s, CounterRng& rng) {
         Probe p;
         const Var words = leaf(p, "words", random_matrix(rng, s.words, s.dim));
         const Var frames = leaf(p, "frames", random_matrix(rng, s.frames, s.dim));
         const Matrix w = random_matrix(rng, s.frames, s.dim, kProjectionScale);
         p.objective = [words, frames, w] { return project(word_cross_attention(words, frames).weighted, w); };
         return p;
       }},
      {"sentence_attention",
       [](const GradCheckSample& s, CounterRng& rng) {
         Probe p;
         const Var sentence = leaf(p, "sentence", random_matrix(rng, 1, s.dim));
         const Var frames = leaf(p, "frames", random_matrix(rng, s.frames, s.dim));
         const Matrix w = random_matrix(rng, s.frames, s.dim, kProjectionScale);
         p.objective = [sentence, frames, w] {
           return project(sentence_cross_attention(sentence, frames).weighted, w);
         };
         return p;
       }},
      {"gate",
       [](const GradCheckSample& s, CounterRng& rng) {
         auto store = std::make_shared<ParamStore>();
         const auto gate = make_gate(*store, rng, s.dim);
         Probe p;
         expose_store(*store, p);
         const Var word_out = leaf(p, "word_out", random_matrix(rng, s.frames, s.dim));
         const Var sentence_out = leaf(p, "sentence_out", random_matrix(rng, s.frames, s.dim));
         const Matrix w = random_matrix(rng, s.frames, s.dim, kProjectionScale);
         p.objective = [store, gate, word_out, sentence_out, w] {
           return project(gated_fusion(*store, gate, word_out, sentence_out).y, w);
         };
         return p;
       }},
      {"prompt_fusion",
       [](const GradCheckSample& s, CounterRng& rng) {
         auto store = std::make_shared<ParamStore>();
         const auto gate = make_gate(*store, rng, s.dim);
         Probe p;
         expose_store(*store, p);
         const Var words = leaf(p, "words", random_matrix(rng, s.words, s.dim));
         const Var sentence = leaf(p, "sentence", random_matrix(rng, 1, s.dim));
         const Var frames = leaf(p, "frames", random_matrix(rng, s.frames, s.dim));
         const Matrix w = random_matrix(rng, s.frames, s.dim, kProjectionScale);
         p.objective = [store, gate, words, sentence, frames, w] {
           return project(prompt_fusion(*store, gate, words, sentence, frames).y, w);
         };
         return p;
       }},
      {"scorer",
       [](const GradCheckSample& s, CounterRng& rng) {
         auto store = std::make_shared<ParamStore>();
         const auto scorer = make_scorer(*store, rng, s.dim, s.dim);
         Probe p;
         expose_store(*store, p);
         const Var frames = leaf(p, "frames", random_matrix(rng, s.frames, s.dim));
         const Var fused = leaf(p, "fused", random_matrix(rng, s.frames, s.dim));
         const Matrix w = random_matrix(rng, s.frames, 1, kProjectionScale);
         p.objective = [store, scorer, frames, fused, w] {
           return project(frame_scores(*store, scorer, frames, fused), w);
         };
         return p;
       }},
      {"hard_topk",
       [](const GradCheckSample& s, CounterRng& rng) {
         Probe p;
         const Var scores = leaf(p, "scores", random_matrix(rng, s.frames, 1));
         const int k = std::min(s.k, s.frames);
         const Matrix w = random_matrix(rng, k, s.frames, kProjectionScale);
         p.objective = [scores, k, w] { return project(hard_topk_train(scores, k, 0.7).weights, w); };
         return p;
       }},
      {"aggregator",
       [](const GradCheckSample& s, CounterRng& rng) {
         auto store = std::make_shared<ParamStore>();
         const auto agg = make_aggregator(*store, rng, s.dim);
         // Move the output projection off its zero start so every path carries gradient.
         for (auto& e : store->entries()) e.var.mutable_value() = random_matrix(rng, e.var.rows(), e.var.cols(), 0.5);
         Probe p;
         expose_store(*store, p);
         const Var frames = leaf(p, "frames", random_matrix(rng, s.k + 1, s.dim));
         const Var alpha = leaf(p, "alpha", random_matrix(rng, s.k + 1, 1, 0.3).array().abs().matrix());
         const Matrix w = random_matrix(rng, 1, s.dim, kProjectionScale);
         p.objective = [store, agg, frames, alpha, w] {
           return project(aggregate_video(*store, agg, weight_frames(frames, alpha)), w);
         };
         return p;
       }},
      {"distill",
       [](const GradCheckSample& s, CounterRng& rng) {
         auto store = std::make_shared<ParamStore>();
         const int heads = s.dim % 2 == 0 ? 2 : 1;
         const auto distill = make_distill(*store, rng, s.dim, heads, 2 * s.dim);
         Probe p;
         expose_store(*store, p);
         const Var frames = leaf(p, "frames", random_matrix(rng, s.frames, s.dim));
         const Matrix w = random_matrix(rng, 1, s.dim, kProjectionScale);
         p.objective = [store, distill, frames, w] { return project(distill_forward(*store, distill, frames), w); };
         return p;
       }},
      {"contrastive_loss",
       [](const GradCheckSample& s, CounterRng& rng) {
         Probe p;
         const Var sim = leaf(p, "sim", random_matrix(rng, s.batch, s.batch));
         p.objective = [sim] { return contrastive_loss(sim); };
         return p;
       }},
      {"mse_loss",
       [](const GradCheckSample& s, CounterRng& rng) {
         Probe p;
         const Var student = leaf(p, "student", random_matrix(rng, s.batch, s.dim));
         const Var teacher = leaf(p, "teacher", random_matrix(rng, s.batch, s.dim));
         p.objective = [student, teacher] { return mse_distill_loss(student, teacher); };
         return p;
       }},
  };
  return blocks;
}

}  // namespace

std::vector<std::string> registered_blocks() {
  std::vector<std::string> names;
  for (const auto& [name, factory] : registry()) names.push_back(name);
  return names;
}

GradCheckResult grad_check(std::string_view block, const GradCheckSample& sample, double epsilon, bool corrupt) {
  const auto& blocks = registry();
  const auto it = std::find_if(blocks.begin(), blocks.end(), [&](const auto& b) { return b.first == block; });
  if (it == blocks.end()) throw std::invalid_argument("grad_check: unknown block '" + std::string(block) + "'");
  if (!(epsilon > 0)) throw std::invalid_argument("grad_check: epsilon must be positive");

  CounterRng rng(sample.seed);
  Probe probe = it->second(sample, rng);
  for (auto& v : probe.leaves) v.zero_grad();
  probe.objective().backward();
  std::vector<Matrix> analytic;
  for (const auto& v : probe.leaves) analytic.push_back(v.grad());

  if (corrupt) {
    std::size_t best_leaf = 0;
    Eigen::Index best_entry = 0;
    double best = -1.0;
    for (std::size_t l = 0; l < analytic.size(); ++l) {
      for (Eigen::Index i = 0; i < analytic[l].size(); ++i) {
        if (std::abs(analytic[l].data()[i]) > best) {
          best = std::abs(analytic[l].data()[i]);
          best_leaf = l;
          best_entry = i;
        }
      }
    }
    analytic[best_leaf].data()[best_entry] *= 1.1;
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t l = 0; l < probe.leaves.size(); ++l) {
    Matrix& value = probe.leaves[l].mutable_value();
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + epsilon;
      const double plus = probe.objective().item();
      value.data()[i] = saved - epsilon;
      const double minus = probe.objective().item();
      value.data()[i] = saved;
      const double fd = (plus - minus) / (2.0 * epsilon);
      const double ga = analytic[l].data()[i];
      const double err = std::abs(ga - fd) / std::max({std::abs(ga), std::abs(fd), 1e-8});
      ++result.entries_checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_entry = probe.names[l] + "[" + std::to_string(i) + "] analytic " + format_double(ga) +
                             " numeric " + format_double(fd);
      }
    }
  }
  return result;
}

}  // namespace proclip
