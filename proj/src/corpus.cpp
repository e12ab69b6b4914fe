#include "proclip/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "proclip/binary_io.hpp"
#include "proclip/rng.hpp"

namespace proclip {

namespace {

constexpr std::string_view kCorpusMagic = "PCLP";
constexpr std::uint16_t kCorpusVersion = 1;

using DVector = Eigen::VectorXd;

std::string padded_id(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%05zu", prefix, i);
  return buf;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

DVector gaussian_vector(CounterRng& rng, Eigen::Index n, double stddev) {
  DVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.gaussian() * stddev;
  return v;
}

DVector unit_vector(CounterRng& rng, Eigen::Index n) {
  DVector v = gaussian_vector(rng, n, 1.0);
  return v / v.norm();
}

// Removes components along `basis` (orthonormalized on the fly).
DVector orthogonalize(DVector v, const std::vector<DVector>& directions) {
  std::vector<DVector> basis;
  for (const auto& d : directions) {
    DVector b = d;
    for (const auto& q : basis) b -= q.dot(b) * q;
    if (b.norm() > 1e-12) basis.push_back(b / b.norm());
  }
  for (const auto& q : basis) v -= q.dot(v) * q;
  return v;
}

void validate_spec(const SynthSpec& spec) {
  if (spec.n_videos == 0 || spec.n_queries == 0) throw std::invalid_argument("synth: counts must be >= 1");
  if (spec.frames_min == 0 || spec.frames_max < spec.frames_min) {
    throw std::invalid_argument("synth: frames range must satisfy 1 <= min <= max");
  }
  if (spec.words_per_query == 0 || spec.raw_dim == 0 || spec.dim == 0) {
    throw std::invalid_argument("synth: words and dims must be >= 1");
  }
  if (!std::isfinite(spec.duration_lo) || !std::isfinite(spec.duration_hi) || spec.duration_lo < 0 ||
      spec.duration_hi < spec.duration_lo) {
    throw std::invalid_argument("synth: duration range must be finite with 0 <= lo <= hi");
  }
  if (std::isnan(spec.relevance_snr) || !(spec.relevance_snr > 0)) {
    throw std::invalid_argument("synth: relevance_snr must be > 0");
  }
  if (!std::isfinite(spec.relevant_frame_fraction) || !(spec.relevant_frame_fraction > 0) ||
      spec.relevant_frame_fraction > 1) {
    throw std::invalid_argument("synth: relevant_frame_fraction must be in (0, 1]");
  }
}

FloatRow to_float_row(const DVector& v) { return v.cast<float>().transpose(); }

}  // namespace

std::optional<std::size_t> CorpusBundle::find_video(std::string_view id) const {
  for (std::size_t i = 0; i < videos.size(); ++i) {
    if (videos[i].id == id) return i;
  }
  return std::nullopt;
}

CorpusBundle synth_corpus(const SynthSpec& spec) {
  validate_spec(spec);
  CounterRng rng(spec.seed);
  const Eigen::Index d = spec.dim;
  const Eigen::Index dv = spec.raw_dim;
  const bool noise_free = std::isinf(spec.relevance_snr);
  const double inv_snr = noise_free ? 0.0 : 1.0 / spec.relevance_snr;

  // Draw order: lift map, sentences, words, then videos in order.
  Eigen::MatrixXd lift = Eigen::MatrixXd::Identity(dv, d);
  if (dv != d) {
    for (Eigen::Index r = 0; r < dv; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) lift(r, c) = rng.gaussian() / std::sqrt(static_cast<double>(d));
    }
  }

  CorpusBundle bundle;
  bundle.dims = {spec.raw_dim, spec.dim};
  bundle.manifest = {spec.seed, std::string(kSynthGeneratorVersion), utc_now()};

  std::vector<DVector> sentences;
  for (std::uint32_t q = 0; q < spec.n_queries; ++q) sentences.push_back(unit_vector(rng, d));

  std::vector<std::vector<std::uint32_t>> queries_of_video(spec.n_videos);
  for (std::uint32_t q = 0; q < spec.n_queries; ++q) {
    const std::uint32_t v = q % spec.n_videos;
    queries_of_video[v].push_back(q);
    QueryRecord query;
    query.id = padded_id('q', q);
    query.sentence = to_float_row(sentences[q]);
    query.words.resize(spec.words_per_query, d);
    for (std::uint32_t w = 0; w < spec.words_per_query; ++w) {
      DVector word = sentences[q] + gaussian_vector(rng, d, 1.0 / std::sqrt(static_cast<double>(d)));
      query.words.row(w) = to_float_row(word / word.norm());
    }
    query.ground_truth_video = padded_id('v', v);
    bundle.queries.push_back(std::move(query));
  }

  for (std::uint32_t v = 0; v < spec.n_videos; ++v) {
    VideoRecord video;
    video.id = padded_id('v', v);
    const auto n = static_cast<Eigen::Index>(rng.uniform_int(spec.frames_min, spec.frames_max));
    video.duration_s = static_cast<float>(rng.uniform(spec.duration_lo, spec.duration_hi));
    video.raw_frames.resize(n, dv);
    video.clip_frames.resize(n, d);

    const auto& planted = queries_of_video[v];
    std::vector<DVector> planted_dirs;
    for (auto q : planted) planted_dirs.push_back(sentences[q]);

    Eigen::Index n_relevant = 0;
    Eigen::Index start = 0;
    if (!planted.empty()) {
      n_relevant = std::clamp<Eigen::Index>(
          static_cast<Eigen::Index>(std::llround(spec.relevant_frame_fraction * static_cast<double>(n))), 1, n);
      start = static_cast<Eigen::Index>(rng.uniform_int(0, n - n_relevant));
    }

    DVector relevant_sum = DVector::Zero(d);
    DVector all_sum = DVector::Zero(d);
    for (Eigen::Index f = 0; f < n; ++f) {
      const bool relevant = f >= start && f < start + n_relevant;
      DVector clip;
      DVector raw;
      if (relevant) {
        const DVector& s = sentences[planted[static_cast<std::size_t>(f - start) % planted.size()]];
        clip = s + gaussian_vector(rng, d, inv_snr / std::sqrt(static_cast<double>(d)));
        raw = lift * s + gaussian_vector(rng, dv, inv_snr / std::sqrt(static_cast<double>(dv)));
        relevant_sum += clip;
      } else {
        DVector dir = unit_vector(rng, d);
        if (noise_free && !planted_dirs.empty()) {
          dir = orthogonalize(dir, planted_dirs);
          dir /= dir.norm();
        }
        clip = dir;
        raw = lift * dir;
      }
      all_sum += clip;
      video.clip_frames.row(f) = to_float_row(clip);
      video.raw_frames.row(f) = to_float_row(raw);
    }
    const DVector teacher = n_relevant > 0 ? relevant_sum : all_sum;
    video.teacher_video = to_float_row(teacher / teacher.norm());
    bundle.videos.push_back(std::move(video));
  }
  return bundle;
}

std::string serialize_corpus(const CorpusBundle& bundle) {
  ByteWriter w;
  w.bytes(kCorpusMagic);
  w.u16(kCorpusVersion);
  w.u16(0);
  w.u32(bundle.dims.raw_dim);
  w.u32(bundle.dims.dim);
  w.u32(static_cast<std::uint32_t>(bundle.videos.size()));
  w.u32(static_cast<std::uint32_t>(bundle.queries.size()));
  for (const auto& v : bundle.videos) {
    if (v.raw_frames.cols() != bundle.dims.raw_dim || v.clip_frames.cols() != bundle.dims.dim ||
        v.teacher_video.size() != bundle.dims.dim || v.raw_frames.rows() != v.clip_frames.rows()) {
      throw FormatError(FormatErrorCode::kDimensionMismatch, "video " + v.id + " does not match corpus dims");
    }
    w.str16(v.id);
    w.f32(v.duration_s);
    w.u32(static_cast<std::uint32_t>(v.raw_frames.rows()));
    w.f32s({v.raw_frames.data(), static_cast<std::size_t>(v.raw_frames.size())});
    w.f32s({v.clip_frames.data(), static_cast<std::size_t>(v.clip_frames.size())});
    w.f32s({v.teacher_video.data(), static_cast<std::size_t>(v.teacher_video.size())});
  }
  for (const auto& q : bundle.queries) {
    if (q.words.cols() != bundle.dims.dim || q.sentence.size() != bundle.dims.dim) {
      throw FormatError(FormatErrorCode::kDimensionMismatch, "query " + q.id + " does not match corpus dims");
    }
    w.str16(q.id);
    w.u32(static_cast<std::uint32_t>(q.words.rows()));
    w.f32s({q.words.data(), static_cast<std::size_t>(q.words.size())});
    w.f32s({q.sentence.data(), static_cast<std::size_t>(q.sentence.size())});
    w.str16(q.ground_truth_video);
  }
  return w.take();
}

CorpusBundle parse_corpus(std::string_view data) {
  ByteReader r(data);
  if (data.size() < kCorpusMagic.size() || r.bytes(kCorpusMagic.size()) != kCorpusMagic) {
    throw FormatError(FormatErrorCode::kBadMagic, "expected PCLP");
  }
  if (const auto version = r.u16(); version != kCorpusVersion) {
    throw FormatError(FormatErrorCode::kVersionMismatch, "corpus version " + std::to_string(version));
  }
  r.u16();  // flags, reserved
  CorpusBundle bundle;
  bundle.dims.raw_dim = r.u32();
  bundle.dims.dim = r.u32();
  const auto n_videos = r.u32();
  const auto n_queries = r.u32();
  if (bundle.dims.raw_dim == 0 || bundle.dims.dim == 0) {
    throw FormatError(FormatErrorCode::kDimensionMismatch, "header declares a zero dimension");
  }
  const Eigen::Index dv = bundle.dims.raw_dim;
  const Eigen::Index d = bundle.dims.dim;
  for (std::uint32_t i = 0; i < n_videos; ++i) {
    VideoRecord v;
    v.id = r.str16();
    v.duration_s = r.f32();
    const auto n = r.u32();
    // Reject absurd sizes before allocating.
    const std::uint64_t need = static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(dv + d) * 4;
    if (need > r.remaining()) {
      throw FormatError(FormatErrorCode::kTruncatedPayload, "video " + v.id + " declares " + std::to_string(n) +
                                                                " frames beyond the payload");
    }
    v.raw_frames.resize(n, dv);
    v.clip_frames.resize(n, d);
    v.teacher_video.resize(d);
    r.f32s({v.raw_frames.data(), static_cast<std::size_t>(v.raw_frames.size())});
    r.f32s({v.clip_frames.data(), static_cast<std::size_t>(v.clip_frames.size())});
    r.f32s({v.teacher_video.data(), static_cast<std::size_t>(v.teacher_video.size())});
    bundle.videos.push_back(std::move(v));
  }
  for (std::uint32_t i = 0; i < n_queries; ++i) {
    QueryRecord q;
    q.id = r.str16();
    const auto w = r.u32();
    if (static_cast<std::uint64_t>(w) * static_cast<std::uint64_t>(d) * 4 > r.remaining()) {
      throw FormatError(FormatErrorCode::kTruncatedPayload, "query " + q.id + " declares " + std::to_string(w) +
                                                                " words beyond the payload");
    }
    q.words.resize(w, d);
    q.sentence.resize(d);
    r.f32s({q.words.data(), static_cast<std::size_t>(q.words.size())});
    r.f32s({q.sentence.data(), static_cast<std::size_t>(q.sentence.size())});
    q.ground_truth_video = r.str16();
    bundle.queries.push_back(std::move(q));
  }
  if (!r.at_end()) {
    throw FormatError(FormatErrorCode::kDimensionMismatch,
                      std::to_string(r.remaining()) + " bytes remain after the records the header declares");
  }
  return bundle;
}

std::filesystem::path manifest_path(const std::filesystem::path& corpus_path) {
  return std::filesystem::path(corpus_path.string() + ".json");
}

std::string manifest_json(const CorpusBundle& bundle) {
  nlohmann::ordered_json j;
  j["format"] = "PCLP";
  j["version"] = kCorpusVersion;
  j["raw_dim"] = bundle.dims.raw_dim;
  j["dim"] = bundle.dims.dim;
  j["n_videos"] = bundle.videos.size();
  j["n_queries"] = bundle.queries.size();
  j["seed"] = bundle.manifest.seed;
  j["generator_version"] = bundle.manifest.generator_version;
  j["created_utc"] = bundle.manifest.created_utc;
  return j.dump(2) + "\n";
}

void write_corpus(const CorpusBundle& bundle, const std::filesystem::path& path) {
  write_file(path, serialize_corpus(bundle));
  write_file(manifest_path(path), manifest_json(bundle));
}

CorpusBundle read_corpus(const std::filesystem::path& path) {
  CorpusBundle bundle = parse_corpus(read_file(path));
  const auto sidecar = manifest_path(path);
  if (std::filesystem::exists(sidecar)) {
    const auto j = nlohmann::json::parse(read_file(sidecar), nullptr, /*allow_exceptions=*/false);
    if (j.is_object()) {
      bundle.manifest.seed = j.value("seed", std::uint64_t{0});
      bundle.manifest.generator_version = j.value("generator_version", std::string{});
      bundle.manifest.created_utc = j.value("created_utc", std::string{});
    }
  }
  return bundle;
}

bool bitwise_equal(const CorpusBundle& a, const CorpusBundle& b) {
  return a.manifest.seed == b.manifest.seed && a.manifest.generator_version == b.manifest.generator_version &&
         serialize_corpus(a) == serialize_corpus(b);
}

ValidationReport validate_corpus(const CorpusBundle& bundle) {
  ValidationReport report;
  auto add = [&](std::string kind, std::string subject, std::optional<std::size_t> row, std::string message) {
    report.violations.push_back({std::move(kind), std::move(subject), row, std::move(message)});
  };
  const Eigen::Index dv = bundle.dims.raw_dim;
  const Eigen::Index d = bundle.dims.dim;

  std::set<std::string> video_ids;
  for (const auto& v : bundle.videos) {
    if (!video_ids.insert(v.id).second) add("duplicate-video-id", v.id, std::nullopt, "video id appears twice");
    if (v.raw_frames.rows() < 1) add("empty-video", v.id, std::nullopt, "video has no frames");
    if (v.raw_frames.rows() != v.clip_frames.rows()) {
      add("frame-count-mismatch", v.id, std::nullopt, "raw_frames and clip_frames differ in N");
    }
    if (v.raw_frames.cols() != dv || v.clip_frames.cols() != d || v.teacher_video.size() != d) {
      add("dimension-mismatch", v.id, std::nullopt, "feature widths differ from corpus dims");
    }
    if (!std::isfinite(v.duration_s) || v.duration_s < 0) {
      add("bad-duration", v.id, std::nullopt, "duration must be finite and >= 0");
    }
    for (Eigen::Index r = 0; r < v.raw_frames.rows(); ++r) {
      if (!v.raw_frames.row(r).allFinite()) {
        add("non-finite", v.id, static_cast<std::size_t>(r), "raw_frames row " + std::to_string(r));
      }
    }
    for (Eigen::Index r = 0; r < v.clip_frames.rows(); ++r) {
      if (!v.clip_frames.row(r).allFinite()) {
        add("non-finite", v.id, static_cast<std::size_t>(r), "clip_frames row " + std::to_string(r));
      }
    }
    if (!v.teacher_video.allFinite()) add("non-finite", v.id, std::nullopt, "teacher_video");
  }

  std::set<std::string> query_ids;
  for (const auto& q : bundle.queries) {
    if (!query_ids.insert(q.id).second) add("duplicate-query-id", q.id, std::nullopt, "query id appears twice");
    if (q.words.rows() < 1) add("empty-query", q.id, std::nullopt, "query has no words");
    if (q.words.cols() != d || q.sentence.size() != d) {
      add("dimension-mismatch", q.id, std::nullopt, "query widths differ from corpus dims");
    }
    for (Eigen::Index r = 0; r < q.words.rows(); ++r) {
      if (!q.words.row(r).allFinite()) {
        add("non-finite", q.id, static_cast<std::size_t>(r), "words row " + std::to_string(r));
      }
    }
    if (q.sentence.size() == 0 || !q.sentence.allFinite() || q.sentence.cwiseAbs().maxCoeff() > 1.0F) {
      add("bad-sentence", q.id, std::nullopt, "sentence entries must be finite and within [-1, 1]");
    }
    if (!video_ids.contains(q.ground_truth_video)) {
      add("missing-ground-truth", q.id, std::nullopt, "ground truth " + q.ground_truth_video + " not in corpus");
    }
  }
  return report;
}

}  // namespace proclip
