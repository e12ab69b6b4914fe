#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "proclip/corpus.hpp"
#include "proclip/model.hpp"

namespace proclip {

struct RetrievalConfig {
  double k_percent = 50.0;
  int k_frames = 12;
  // Fan stage 2 out over PROCLIP_THREADS workers. Counters are unaffected.
  bool parallel = false;
};

struct BuildStats {
  double seconds = 0.0;
  std::size_t videos = 0;
  std::size_t frames = 0;
};

// Query-independent per-video state. Immutable after build; safe to share
// across threads.
struct RetrievalIndex {
  std::shared_ptr<const ModelParams> model;
  std::uint64_t model_hash = 0;
  std::vector<std::string> ids;
  std::vector<FrameContextMatrix> frame_context;  // f32-representable values
  Matrix distilled;                               // M x D, unit rows, f32-representable
  std::vector<Matrix> clip_frames;                // teacher frame features, from the corpus
  BuildStats build_stats;

  std::size_t size() const { return ids.size(); }
};

RetrievalIndex index_corpus(const CorpusBundle& corpus, std::shared_ptr<const ModelParams> model);

// "PCLX", u16 version, u16 flags, u64 model hash, u32 M, u32 D, then per video:
// u16-prefixed id, D f32 phi(v), u32 N, N x D f32 frame context.
std::string serialize_index(const RetrievalIndex& index);
// Teacher frames are re-attached from `corpus`; the model must hash to the
// value recorded in the file.
RetrievalIndex parse_index(std::string_view data, const CorpusBundle& corpus,
                           std::shared_ptr<const ModelParams> model);
void write_index(const RetrievalIndex& index, const std::filesystem::path& path);
RetrievalIndex read_index(const std::filesystem::path& path, const CorpusBundle& corpus,
                          std::shared_ptr<const ModelParams> model);
bool bitwise_equal(const RetrievalIndex& a, const RetrievalIndex& b);

struct PreparedQuery {
  std::string id;
  Matrix words;                 // W x D
  Eigen::RowVectorXd sentence;  // 1 x D
};

PreparedQuery prepare_query(const QueryRecord& query);

// Prompt attention -> frame scores -> exact top-K -> alpha weighting ->
// aggregation -> cosine with the sentence, for one (query, video) pair.
struct FineScore {
  double score = 0.0;
  SelectedFrames selection;
};
FineScore fine_score(const RetrievalIndex& index, std::size_t video, const PreparedQuery& query, int k_frames);

struct RankedList {
  std::vector<std::string> ids;  // candidates by stage-2 score, then the rest by stage-1 score
  std::vector<double> scores;    // stage-2 score for candidates, stage-1 score otherwise
  std::size_t candidate_count = 0;
  std::size_t stage2_count = 0;      // videos scored at stage 2
  std::size_t frames_aggregated = 0;  // selected frames fed to the aggregator
  double stage1_seconds = 0.0;
  double stage2_seconds = 0.0;
};

RankedList retrieve(const PreparedQuery& query, const RetrievalIndex& index, const RetrievalConfig& config);
RankedList retrieve(const QueryRecord& query, const RetrievalIndex& index, const RetrievalConfig& config);
// Reference pipeline: stage 2 on every video, no stage-1 pruning.
RankedList retrieve_unpruned(const PreparedQuery& query, const RetrievalIndex& index, int k_frames);

struct MetricsReport {
  double r1 = 0.0;  // fractions in [0, 1]
  double r5 = 0.0;
  double r10 = 0.0;
  double mean_rank = 0.0;
  std::vector<std::string> query_ids;
  std::vector<std::size_t> ranks;  // 1-based
};

// Ranks -> R@1/5/10 and MnR.
MetricsReport metrics_from_ranks(std::vector<std::string> query_ids, std::vector<std::size_t> ranks);
MetricsReport evaluate(const std::vector<QueryRecord>& queries, const RetrievalIndex& index,
                       const RetrievalConfig& config);
std::string metrics_csv(const MetricsReport& report);

struct BenchConfig {
  std::vector<double> k_percents{100, 90, 80, 70, 60, 50, 40, 30, 20, 10, 5};
  int rounds = 10;
  int k_frames = 12;
  bool parallel = false;
};

struct LatencyReport {
  double k_percent = 0.0;
  double fq_latency_s = 0.0;  // cold index build + one retrieval
  double aq_latency_s = 0.0;  // mean warm retrieval over `aq_rounds`
  int aq_rounds = 0;
  std::size_t corpus_size = 0;
  std::size_t stage2_count = 0;
};

std::vector<LatencyReport> bench(const CorpusBundle& corpus, std::shared_ptr<const ModelParams> model,
                                 const BenchConfig& config);
std::string latency_csv(const std::vector<LatencyReport>& reports);

}  // namespace proclip
