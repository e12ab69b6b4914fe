#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace proclip {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FloatRow = Eigen::Matrix<float, 1, Eigen::Dynamic>;

struct VideoRecord {
  std::string id;
  float duration_s = 0.0F;
  FloatMatrix raw_frames;   // N x D_v, lightweight-extractor features
  FloatMatrix clip_frames;  // N x D, teacher per-frame features
  FloatRow teacher_video;   // D, teacher video feature

  Eigen::Index frame_count() const { return raw_frames.rows(); }
};

struct QueryRecord {
  std::string id;
  FloatMatrix words;  // W x D token embeddings
  FloatRow sentence;  // D, [EOS] representation
  std::string ground_truth_video;
};

struct CorpusDims {
  std::uint32_t raw_dim = 0;
  std::uint32_t dim = 0;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::string generator_version;
  std::string created_utc;
};

struct CorpusBundle {
  std::vector<VideoRecord> videos;
  std::vector<QueryRecord> queries;
  CorpusDims dims;
  CorpusManifest manifest;

  // Index into `videos`, or nullopt.
  std::optional<std::size_t> find_video(std::string_view id) const;
};

struct SynthSpec {
  std::uint32_t n_videos = 50;
  std::uint32_t n_queries = 50;
  std::uint32_t frames_min = 32;
  std::uint32_t frames_max = 32;
  std::uint32_t words_per_query = 8;
  std::uint32_t raw_dim = 32;
  std::uint32_t dim = 32;
  double duration_lo = 10.0;
  double duration_hi = 120.0;
  // Infinity requests noise-free relevant frames and distractors orthogonal
  // to the planted query directions.
  double relevance_snr = 10.0;
  double relevant_frame_fraction = 0.25;
  std::uint64_t seed = 7;
};

inline constexpr std::string_view kSynthGeneratorVersion = "proclip-synth/1";

// Deterministic planted corpus. Query q is relevant to video (q mod n_videos).
CorpusBundle synth_corpus(const SynthSpec& spec);

// Binary layout (little endian): "PCLP", u16 version=1, u16 flags, u32 D_v,
// u32 D, u32 n_videos, u32 n_queries, then videos and queries.
std::string serialize_corpus(const CorpusBundle& bundle);
CorpusBundle parse_corpus(std::string_view data);

// Writes `path` plus a sidecar manifest at `path` + ".json".
void write_corpus(const CorpusBundle& bundle, const std::filesystem::path& path);
// Reads the sidecar manifest when present.
CorpusBundle read_corpus(const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& corpus_path);
std::string manifest_json(const CorpusBundle& bundle);

// Equality of every stored bit, including the manifest's seed and generator.
bool bitwise_equal(const CorpusBundle& a, const CorpusBundle& b);

struct Violation {
  std::string kind;     // e.g. "duplicate-video-id", "non-finite"
  std::string subject;  // video or query id
  std::optional<std::size_t> row;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_corpus(const CorpusBundle& bundle);

}  // namespace proclip
