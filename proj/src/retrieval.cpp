#include "proclip/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "proclip/binary_io.hpp"
#include "proclip/parallel.hpp"

namespace proclip {
namespace {

constexpr std::string_view kIndexMagic = "PCLX";
constexpr std::uint16_t kIndexVersion = 1;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Matrix to_double(const FloatMatrix& m) { return m.cast<double>(); }

Matrix round_f32(const Matrix& m) { return m.cast<float>().cast<double>(); }

void check_model_dims(const CorpusBundle& corpus, const ModelParams& model) {
  if (corpus.dims.raw_dim != model.config.raw_dim || corpus.dims.dim != model.config.dim) {
    throw FormatError(FormatErrorCode::kDimensionMismatch,
                      "corpus dims (" + std::to_string(corpus.dims.raw_dim) + ", " +
                          std::to_string(corpus.dims.dim) + ") do not match model (" +
                          std::to_string(model.config.raw_dim) + ", " + std::to_string(model.config.dim) + ")");
  }
}

// Descending score, ties by id.
void sort_by_score(std::vector<std::size_t>& rows, const std::vector<double>& score,
                   const std::vector<std::string>& ids) {
  std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return ids[a] < ids[b];
  });
}

}  // namespace

RetrievalIndex index_corpus(const CorpusBundle& corpus, std::shared_ptr<const ModelParams> model) {
  if (!model) throw std::invalid_argument("index_corpus: null model");
  check_model_dims(corpus, *model);
  const auto start = Clock::now();
  NoGradGuard no_grad;

  RetrievalIndex index;
  index.model = model;
  index.model_hash = model_hash(*model);
  const std::size_t m = corpus.videos.size();
  index.ids.reserve(m);
  index.frame_context.reserve(m);
  index.clip_frames.reserve(m);
  index.distilled = Matrix(static_cast<Eigen::Index>(m), model->config.dim);

  for (std::size_t i = 0; i < m; ++i) {
    const VideoRecord& video = corpus.videos[i];
    const Var raw(to_double(video.raw_frames));
    const Var context = encode_frames(model->store, model->encoder, raw, video.duration_s);
    Matrix rows = round_f32(context.value());
    const Var phi = distill_forward(model->store, model->distill, Var(rows));
    index.distilled.row(static_cast<Eigen::Index>(i)) = round_f32(phi.value());
    index.ids.push_back(video.id);
    index.frame_context.push_back({std::move(rows), video.id});
    index.clip_frames.push_back(to_double(video.clip_frames));
    index.build_stats.frames += static_cast<std::size_t>(video.frame_count());
  }
  index.build_stats.videos = m;
  index.build_stats.seconds = seconds_since(start);
  return index;
}

std::string serialize_index(const RetrievalIndex& index) {
  ByteWriter w;
  w.bytes(kIndexMagic);
  w.u16(kIndexVersion);
  w.u16(0);
  w.u64(index.model_hash);
  w.u32(static_cast<std::uint32_t>(index.size()));
  w.u32(static_cast<std::uint32_t>(index.distilled.cols()));
  for (std::size_t i = 0; i < index.size(); ++i) {
    w.str16(index.ids[i]);
    const Eigen::RowVectorXf phi = index.distilled.row(static_cast<Eigen::Index>(i)).cast<float>();
    w.f32s({phi.data(), static_cast<std::size_t>(phi.size())});
    const FloatMatrix rows = index.frame_context[i].rows.cast<float>();
    w.u32(static_cast<std::uint32_t>(rows.rows()));
    w.f32s({rows.data(), static_cast<std::size_t>(rows.size())});
  }
  return w.take();
}

RetrievalIndex parse_index(std::string_view data, const CorpusBundle& corpus,
                           std::shared_ptr<const ModelParams> model) {
  if (!model) throw std::invalid_argument("parse_index: null model");
  ByteReader r(data);
  if (data.size() < kIndexMagic.size() || r.bytes(kIndexMagic.size()) != kIndexMagic) {
    throw FormatError(FormatErrorCode::kBadMagic, "not an index file");
  }
  const std::uint16_t version = r.u16();
  if (version != kIndexVersion) {
    throw FormatError(FormatErrorCode::kVersionMismatch, "index version " + std::to_string(version));
  }
  r.u16();
  RetrievalIndex index;
  index.model = model;
  index.model_hash = r.u64();
  if (index.model_hash != model_hash(*model)) {
    throw FormatError(FormatErrorCode::kDimensionMismatch, "index was built with a different model");
  }
  const std::uint32_t m = r.u32();
  const std::uint32_t d = r.u32();
  if (d != model->config.dim) {
    throw FormatError(FormatErrorCode::kDimensionMismatch,
                      "index width " + std::to_string(d) + " != model width " + std::to_string(model->config.dim));
  }
  if (m != corpus.videos.size()) {
    throw FormatError(FormatErrorCode::kDimensionMismatch, "index holds " + std::to_string(m) +
                                                               " videos, corpus holds " +
                                                               std::to_string(corpus.videos.size()));
  }
  index.distilled = Matrix(m, d);
  for (std::uint32_t i = 0; i < m; ++i) {
    std::string id = r.str16();
    const VideoRecord& video = corpus.videos[i];
    if (id != video.id) throw FormatError(FormatErrorCode::kDimensionMismatch, "index id " + id + " != " + video.id);
    Eigen::RowVectorXf phi(d);
    r.f32s({phi.data(), d});
    index.distilled.row(i) = phi.cast<double>();
    const std::uint32_t n = r.u32();
    if (static_cast<std::uint64_t>(n) * d * 4 > r.remaining()) {
      throw FormatError(FormatErrorCode::kTruncatedPayload, "frame context of " + id);
    }
    if (n != static_cast<std::uint32_t>(video.frame_count())) {
      throw FormatError(FormatErrorCode::kDimensionMismatch, "frame count of " + id);
    }
    FloatMatrix rows(n, d);
    r.f32s({rows.data(), static_cast<std::size_t>(rows.size())});
    index.frame_context.push_back({rows.cast<double>(), id});
    index.clip_frames.push_back(to_double(video.clip_frames));
    index.ids.push_back(std::move(id));
    index.build_stats.frames += n;
  }
  if (!r.at_end()) throw FormatError(FormatErrorCode::kDimensionMismatch, "trailing bytes after index");
  index.build_stats.videos = m;
  return index;
}

void write_index(const RetrievalIndex& index, const std::filesystem::path& path) {
  write_file(path, serialize_index(index));
}

RetrievalIndex read_index(const std::filesystem::path& path, const CorpusBundle& corpus,
                          std::shared_ptr<const ModelParams> model) {
  return parse_index(read_file(path), corpus, std::move(model));
}

bool bitwise_equal(const RetrievalIndex& a, const RetrievalIndex& b) {
  return a.model_hash == b.model_hash && serialize_index(a) == serialize_index(b);
}

PreparedQuery prepare_query(const QueryRecord& query) {
  return {query.id, query.words.cast<double>(), query.sentence.cast<double>()};
}

FineScore fine_score(const RetrievalIndex& index, std::size_t video, const PreparedQuery& query, int k_frames) {
  const ModelParams& model = *index.model;
  NoGradGuard no_grad;
  const Var frames(index.frame_context.at(video).rows);
  const Var sentence(query.sentence);
  const FusionOutput fused = prompt_fusion(model.store, model.gate, Var(query.words), sentence, frames);
  const Var scores = frame_scores(model.store, model.scorer, frames, fused.y);

  FineScore out;
  const int k = std::min<int>(k_frames, static_cast<int>(frames.rows()));
  out.selection = topk_infer(Eigen::Map<const Eigen::VectorXd>(scores.value().data(), scores.rows()), k);

  const Matrix& clip = index.clip_frames[video];
  Matrix selected(static_cast<Eigen::Index>(out.selection.indices.size()), clip.cols());
  for (std::size_t r = 0; r < out.selection.indices.size(); ++r) {
    selected.row(static_cast<Eigen::Index>(r)) = clip.row(out.selection.indices[r]);
  }
  const Var weighted = weight_frames(Var(std::move(selected)), Var(Matrix(out.selection.alpha)));
  const Var embedding = aggregate_video(model.store, model.aggregator, weighted);
  out.score = cosine_similarity(Eigen::RowVectorXd(embedding.value().row(0)), query.sentence);
  return out;
}

namespace {

void check_query(const PreparedQuery& query, const RetrievalIndex& index) {
  const Eigen::Index d = index.model->config.dim;
  if (query.sentence.size() != d || query.words.cols() != d) {
    throw FormatError(FormatErrorCode::kDimensionMismatch, "query " + query.id + " width does not match the model");
  }
}

// Stage 2 over `rows` in place of their stage-1 scores.
void score_rows(const std::vector<std::size_t>& rows, const PreparedQuery& query, const RetrievalIndex& index,
                int k_frames, bool parallel, std::vector<double>& score, std::size_t& frames_aggregated) {
  std::vector<std::size_t> frame_counts(rows.size(), 0);
  auto body = [&](std::size_t i) {
    const FineScore fine = fine_score(index, rows[i], query, k_frames);
    score[rows[i]] = fine.score;
    frame_counts[i] = fine.selection.indices.size();
  };
  if (parallel) {
    parallel_for(rows.size(), body);
  } else {
    for (std::size_t i = 0; i < rows.size(); ++i) body(i);
  }
  frames_aggregated = std::accumulate(frame_counts.begin(), frame_counts.end(), std::size_t{0});
}

RankedList assemble(const std::vector<std::size_t>& order, const std::vector<double>& score,
                    const std::vector<std::string>& ids) {
  RankedList out;
  out.ids.reserve(order.size());
  out.scores.reserve(order.size());
  for (std::size_t row : order) {
    out.ids.push_back(ids[row]);
    out.scores.push_back(score[row]);
  }
  return out;
}

}  // namespace

RankedList retrieve(const PreparedQuery& query, const RetrievalIndex& index, const RetrievalConfig& config) {
  check_query(query, index);
  const auto start = Clock::now();
  const CoarseRanking coarse = coarse_rank(query.sentence, index.ids, index.distilled);
  const std::size_t keep = retained_count(index.size(), config.k_percent);
  std::vector<std::size_t> candidates(coarse.order.begin(), coarse.order.begin() + static_cast<long>(keep));
  std::vector<double> score(coarse.scores.data(), coarse.scores.data() + coarse.scores.size());
  const double stage1 = seconds_since(start);

  const auto fine_start = Clock::now();
  std::size_t frames = 0;
  score_rows(candidates, query, index, config.k_frames, config.parallel, score, frames);
  sort_by_score(candidates, score, index.ids);
  std::vector<std::size_t> order = candidates;
  order.insert(order.end(), coarse.order.begin() + static_cast<long>(keep), coarse.order.end());

  RankedList out = assemble(order, score, index.ids);
  out.candidate_count = keep;
  out.stage2_count = keep;
  out.frames_aggregated = frames;
  out.stage1_seconds = stage1;
  out.stage2_seconds = seconds_since(fine_start);
  return out;
}

RankedList retrieve(const QueryRecord& query, const RetrievalIndex& index, const RetrievalConfig& config) {
  return retrieve(prepare_query(query), index, config);
}

RankedList retrieve_unpruned(const PreparedQuery& query, const RetrievalIndex& index, int k_frames) {
  check_query(query, index);
  const auto start = Clock::now();
  std::vector<std::size_t> rows(index.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::vector<double> score(index.size(), 0.0);
  std::size_t frames = 0;
  score_rows(rows, query, index, k_frames, false, score, frames);
  sort_by_score(rows, score, index.ids);
  RankedList out = assemble(rows, score, index.ids);
  out.candidate_count = index.size();
  out.stage2_count = index.size();
  out.frames_aggregated = frames;
  out.stage2_seconds = seconds_since(start);
  return out;
}

MetricsReport metrics_from_ranks(std::vector<std::string> query_ids, std::vector<std::size_t> ranks) {
  if (ranks.empty()) throw std::invalid_argument("metrics: no queries");
  MetricsReport report;
  const double n = static_cast<double>(ranks.size());
  double r1 = 0, r5 = 0, r10 = 0, total = 0;
  for (std::size_t rank : ranks) {
    if (rank == 0) throw std::invalid_argument("metrics: ranks are 1-based");
    r1 += rank <= 1;
    r5 += rank <= 5;
    r10 += rank <= 10;
    total += static_cast<double>(rank);
  }
  report.r1 = r1 / n;
  report.r5 = r5 / n;
  report.r10 = r10 / n;
  report.mean_rank = total / n;
  report.query_ids = std::move(query_ids);
  report.ranks = std::move(ranks);
  return report;
}

MetricsReport evaluate(const std::vector<QueryRecord>& queries, const RetrievalIndex& index,
                       const RetrievalConfig& config) {
  std::vector<std::string> ids;
  std::vector<std::size_t> ranks;
  for (const QueryRecord& q : queries) {
    const RankedList list = retrieve(q, index, config);
    const auto it = std::find(list.ids.begin(), list.ids.end(), q.ground_truth_video);
    if (it == list.ids.end()) {
      throw std::invalid_argument("query " + q.id + ": ground truth " + q.ground_truth_video + " is not indexed");
    }
    ids.push_back(q.id);
    ranks.push_back(static_cast<std::size_t>(it - list.ids.begin()) + 1);
  }
  return metrics_from_ranks(std::move(ids), std::move(ranks));
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string metrics_csv(const MetricsReport& report) {
  return "metric,value\nR@1," + fmt(report.r1) + "\nR@5," + fmt(report.r5) + "\nR@10," + fmt(report.r10) +
         "\nMnR," + fmt(report.mean_rank) + "\n";
}

std::vector<LatencyReport> bench(const CorpusBundle& corpus, std::shared_ptr<const ModelParams> model,
                                 const BenchConfig& config) {
  if (corpus.queries.empty()) throw std::invalid_argument("bench: corpus has no queries");
  if (config.rounds < 1) throw std::invalid_argument("bench: rounds must be positive");
  std::vector<PreparedQuery> queries;
  queries.reserve(corpus.queries.size());
  for (const auto& q : corpus.queries) queries.push_back(prepare_query(q));

  std::vector<LatencyReport> reports;
  for (double k : config.k_percents) {
    const RetrievalConfig rc{k, config.k_frames, config.parallel};
    LatencyReport report;
    report.k_percent = k;
    report.corpus_size = corpus.videos.size();

    const auto cold = Clock::now();
    const RetrievalIndex index = index_corpus(corpus, model);
    const RankedList first = retrieve(queries.front(), index, rc);
    report.fq_latency_s = seconds_since(cold);
    report.stage2_count = first.stage2_count;

    // Warm-up pass outside the timed window.
    retrieve(queries[1 % queries.size()], index, rc);
    const auto warm = Clock::now();
    for (int round = 0; round < config.rounds; ++round) {
      retrieve(queries[static_cast<std::size_t>(round) % queries.size()], index, rc);
    }
    report.aq_latency_s = seconds_since(warm) / config.rounds;
    report.aq_rounds = config.rounds;
    reports.push_back(report);
  }
  return reports;
}

std::string latency_csv(const std::vector<LatencyReport>& reports) {
  std::string out = "k_percent,fq_s,aq_s,stage2_count\n";
  for (const auto& r : reports) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%g,%.6f,%.6f,%zu\n", r.k_percent, r.fq_latency_s, r.aq_latency_s,
                  r.stage2_count);
    out += buf;
  }
  return out;
}

}  // namespace proclip
