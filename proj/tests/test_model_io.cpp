#include <gtest/gtest.h>

#include <filesystem>

#include "proclip/binary_io.hpp"
#include "proclip/model.hpp"

using namespace proclip;

namespace {

ModelConfig small_config(std::uint64_t seed = 3) {
  ModelConfig c;
  c.raw_dim = 6;
  c.dim = 8;
  c.scorer_hidden = 5;
  c.distill_heads = 2;
  c.distill_ff_width = 16;
  c.seed = seed;
  return c;
}

FormatErrorCode code_of(std::string_view data) {
  try {
    parse_checkpoint(data);
  } catch (const FormatError& e) {
    return e.code();
  }
  ADD_FAILURE() << "parse succeeded";
  return FormatErrorCode::kIoError;
}

}  // namespace

TEST(ModelIo, InitIsSeededAndF32Representable) {
  const ModelParams a = ModelParams::init(small_config());
  const ModelParams b = ModelParams::init(small_config());
  EXPECT_TRUE(bitwise_equal(a, b));
  EXPECT_FALSE(bitwise_equal(a, ModelParams::init(small_config(4))));
  for (const auto& e : a.store.entries()) {
    EXPECT_EQ(e.var.value(), e.var.value().cast<float>().cast<double>()) << e.name;
    EXPECT_FALSE(e.var.requires_grad()) << e.name;
  }
  const auto groups = a.store.groups();
  EXPECT_EQ(groups, (std::vector<std::string>{"encoder", "gate", "scorer", "aggregator", "distill"}));
}

TEST(ModelIo, CheckpointRoundTripIsBitExact) {
  ModelParams m = ModelParams::init(small_config());
  m.store[m.gate.b2].mutable_value()(0, 0) = 0.125;
  const auto path = std::filesystem::temp_directory_path() / "proclip_model_io.pclw";
  write_checkpoint(m, path);
  const ModelParams back = read_checkpoint(path);
  EXPECT_TRUE(bitwise_equal(m, back));
  EXPECT_EQ(model_hash(m), model_hash(back));
  EXPECT_EQ(serialize_checkpoint(back), read_file(path));
  EXPECT_EQ(back.config.dim, 8U);
  EXPECT_EQ(back.config.distill_heads, 2U);
  std::filesystem::remove(path);
}

TEST(ModelIo, HashTracksEveryParameter) {
  const ModelParams m = ModelParams::init(small_config());
  ModelParams changed = m;
  changed.store[changed.distill.input.bias].mutable_value()(0, 3) += 1.0;
  EXPECT_NE(model_hash(m), model_hash(changed));
  EXPECT_FALSE(group_bitwise_equal(m, changed, kDistillGroup));
  EXPECT_TRUE(group_bitwise_equal(m, changed, kEncoderGroup));
  EXPECT_TRUE(group_bitwise_equal(m, changed, kAggregatorGroup));
}

TEST(ModelIo, CorruptionMapsToErrorCodes) {
  const std::string good = serialize_checkpoint(ModelParams::init(small_config()));
  std::string magic = good;
  magic[0] = 'X';
  EXPECT_EQ(code_of(magic), FormatErrorCode::kBadMagic);
  std::string version = good;
  version[4] = 9;
  EXPECT_EQ(code_of(version), FormatErrorCode::kVersionMismatch);
  for (std::size_t len : {std::size_t{2}, std::size_t{6}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
    EXPECT_EQ(code_of(good.substr(0, len)), len < 4 ? FormatErrorCode::kBadMagic : FormatErrorCode::kTruncatedPayload)
        << len;
  }
  EXPECT_EQ(code_of(good + "x"), FormatErrorCode::kDimensionMismatch);
  // Declared D = 7 is not divisible by the distill head count.
  std::string dims = good;
  dims[12] = 7;
  EXPECT_EQ(code_of(dims), FormatErrorCode::kDimensionMismatch);
  EXPECT_THROW(read_checkpoint("/nonexistent/dir/model.pclw"), FormatError);
  try {
    read_checkpoint("/nonexistent/dir/model.pclw");
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrorCode::kIoError);
  }
}
