#include "proclip/model.hpp"

#include <bit>
#include <cstring>

#include "proclip/binary_io.hpp"

namespace proclip {

namespace {

constexpr std::string_view kCheckpointMagic = "PCLW";
constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config) {
  if (config.raw_dim == 0 || config.dim == 0 || config.scorer_hidden == 0) {
    throw std::invalid_argument("model config: dims must be >= 1");
  }
  ModelParams m;
  m.config = config;
  CounterRng rng(config.seed);
  const Eigen::Index d = config.dim;
  m.encoder = make_encoder(m.store, rng, config.raw_dim, d, config.depth_rule);
  m.gate = make_gate(m.store, rng, d);
  m.scorer = make_scorer(m.store, rng, d, config.scorer_hidden);
  m.aggregator = make_aggregator(m.store, rng, d);
  m.distill = make_distill(m.store, rng, d, static_cast<int>(config.distill_heads), config.distill_ff_width);
  m.store.round_to_f32();
  return m;
}

std::string serialize_checkpoint(const ModelParams& model) {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  w.u16(0);
  const auto& c = model.config;
  w.u32(c.raw_dim);
  w.u32(c.dim);
  w.u32(c.scorer_hidden);
  w.u32(static_cast<std::uint32_t>(c.depth_rule.short_depth));
  w.u32(static_cast<std::uint32_t>(c.depth_rule.long_depth));
  w.u64(std::bit_cast<std::uint64_t>(c.depth_rule.threshold_s));
  w.u32(c.distill_heads);
  w.u32(c.distill_ff_width);
  w.u64(c.seed);
  const auto& entries = model.store.entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    const Matrix& m = e.var.value();
    w.str16(e.group + "/" + e.name);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f32(static_cast<float>(m.data()[i]));
  }
  return w.take();
}

ModelParams parse_checkpoint(std::string_view data) {
  ByteReader r(data);
  if (data.size() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError(FormatErrorCode::kBadMagic, "expected PCLW");
  }
  if (const auto version = r.u16(); version != kCheckpointVersion) {
    throw FormatError(FormatErrorCode::kVersionMismatch, "checkpoint version " + std::to_string(version));
  }
  r.u16();
  ModelConfig c;
  c.raw_dim = r.u32();
  c.dim = r.u32();
  c.scorer_hidden = r.u32();
  c.depth_rule.short_depth = static_cast<int>(r.u32());
  c.depth_rule.long_depth = static_cast<int>(r.u32());
  c.depth_rule.threshold_s = std::bit_cast<double>(r.u64());
  c.distill_heads = r.u32();
  c.distill_ff_width = r.u32();
  c.seed = r.u64();
  ModelParams model;
  try {
    model = ModelParams::init(c);
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorCode::kDimensionMismatch, std::string("checkpoint config: ") + e.what());
  }
  auto& entries = model.store.entries();
  const auto count = r.u32();
  if (count != entries.size()) {
    throw FormatError(FormatErrorCode::kDimensionMismatch,
                      "checkpoint has " + std::to_string(count) + " tensors, config implies " +
                          std::to_string(entries.size()));
  }
  for (auto& e : entries) {
    const std::string name = r.str16();
    const auto rows = r.u32();
    const auto cols = r.u32();
    Matrix& m = e.var.mutable_value();
    if (name != e.group + "/" + e.name || rows != m.rows() || cols != m.cols()) {
      throw FormatError(FormatErrorCode::kDimensionMismatch, "tensor " + name + " does not match " + e.group +
                                                                 "/" + e.name);
    }
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(r.f32());
  }
  if (!r.at_end()) throw FormatError(FormatErrorCode::kDimensionMismatch, "trailing bytes after tensors");
  return model;
}

void write_checkpoint(const ModelParams& model, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(model));
}

ModelParams read_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

std::uint64_t model_hash(const ModelParams& model) { return fnv1a64(serialize_checkpoint(model)); }

namespace {

bool matrix_bits_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

}  // namespace

bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  const auto& ea = a.store.entries();
  const auto& eb = b.store.entries();
  if (ea.size() != eb.size()) return false;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    if (ea[i].name != eb[i].name || !matrix_bits_equal(ea[i].var.value(), eb[i].var.value())) return false;
  }
  return true;
}

bool group_bitwise_equal(const ModelParams& a, const ModelParams& b, std::string_view group) {
  const auto& ea = a.store.entries();
  const auto& eb = b.store.entries();
  if (ea.size() != eb.size()) return false;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    if (ea[i].group != group) continue;
    if (ea[i].name != eb[i].name || !matrix_bits_equal(ea[i].var.value(), eb[i].var.value())) return false;
  }
  return true;
}

}  // namespace proclip
