#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "proclip/rng.hpp"
#include "proclip/tensor.hpp"

namespace proclip {

struct ParamId {
  std::size_t index = static_cast<std::size_t>(-1);
};

// Owns every learnable tensor of a model as a leaf `Var`. Copies are deep, so
// a copied store never aliases the original's values or gradients.
class ParamStore {
 public:
  struct Entry {
    std::string group;
    std::string name;
    Var var;
  };

  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  ParamId add(std::string group, std::string name, Matrix init);

  const Var& operator[](ParamId id) const { return entries_.at(id.index).var; }
  Var& operator[](ParamId id) { return entries_.at(id.index).var; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Sets requires_grad on every tensor of `group`.
  void set_trainable(std::string_view group, bool trainable);
  bool trainable(std::string_view group) const;
  std::vector<std::string> groups() const;
  void zero_grad();
  // Rounds every value to the nearest f32 so checkpoints round-trip exactly.
  void round_to_f32();

 private:
  std::vector<Entry> entries_;
};

// Seeded uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Matrix uniform_init(CounterRng& rng, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in);

// y = x W + b with W stored in x out.
struct LinearParams {
  ParamId weight;
  ParamId bias;
};

struct LayerNormParams {
  ParamId gamma;
  ParamId beta;
};

LinearParams make_linear(ParamStore& store, CounterRng& rng, const std::string& group, const std::string& prefix,
                         Eigen::Index in, Eigen::Index out);
LayerNormParams make_layer_norm(ParamStore& store, const std::string& group, const std::string& prefix,
                                Eigen::Index width);

Var linear(const ParamStore& store, const LinearParams& p, const Var& x);
Var layer_norm(const ParamStore& store, const LayerNormParams& p, const Var& x);

// Attention with learned query/key/value/output projections.
struct AttentionParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  LinearParams output;
  int heads = 1;
};

AttentionParams make_attention(ParamStore& store, CounterRng& rng, const std::string& group,
                               const std::string& prefix, Eigen::Index width, int heads);

// softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated, then output
// projection. When `weights` is non-null it receives one N x N matrix per head.
Var self_attention(const ParamStore& store, const AttentionParams& p, const Var& x,
                   std::vector<Matrix>* weights = nullptr);

// Pre-norm residual block:
//   y = x + Attn(LN1(x));  z = y + FFN(LN2(y)),  FFN = Linear -> GELU -> Linear.
struct TransformerLayerParams {
  LayerNormParams norm1;
  AttentionParams attention;
  LayerNormParams norm2;
  LinearParams ff_in;
  LinearParams ff_out;
};

TransformerLayerParams make_transformer_layer(ParamStore& store, CounterRng& rng, const std::string& group,
                                              const std::string& prefix, Eigen::Index width, int heads,
                                              Eigen::Index ff_width);

Var transformer_layer(const ParamStore& store, const TransformerLayerParams& p, const Var& x,
                      std::vector<Matrix>* weights = nullptr);

// PE(n, 2i) = sin(n / 10000^(2i/D)), PE(n, 2i+1) = cos(n / 10000^(2i/D)).
Matrix sinusoidal_positions(Eigen::Index rows, Eigen::Index width);

}  // namespace proclip
