#include "proclip/params.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace proclip {

ParamStore::ParamStore(const ParamStore& other) {
  entries_.reserve(other.entries_.size());
  for (const auto& e : other.entries_) entries_.push_back({e.group, e.name, e.var.clone()});
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this != &other) {
    ParamStore copy(other);
    *this = std::move(copy);
  }
  return *this;
}

ParamId ParamStore::add(std::string group, std::string name, Matrix init) {
  entries_.push_back({std::move(group), std::move(name), Var(std::move(init), false)});
  return ParamId{entries_.size() - 1};
}

void ParamStore::set_trainable(std::string_view group, bool trainable) {
  for (auto& e : entries_) {
    if (e.group == group) e.var.set_requires_grad(trainable);
  }
}

bool ParamStore::trainable(std::string_view group) const {
  for (const auto& e : entries_) {
    if (e.group == group && e.var.requires_grad()) return true;
  }
  return false;
}

std::vector<std::string> ParamStore::groups() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& e : entries_) {
    if (seen.insert(e.group).second) out.push_back(e.group);
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

void ParamStore::round_to_f32() {
  for (auto& e : entries_) {
    auto& m = e.var.mutable_value();
    m = m.cast<float>().cast<double>();
  }
}

Matrix uniform_init(CounterRng& rng, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m.cast<float>().cast<double>();
}

LinearParams make_linear(ParamStore& store, CounterRng& rng, const std::string& group, const std::string& prefix,
                         Eigen::Index in, Eigen::Index out) {
  LinearParams p;
  p.weight = store.add(group, prefix + ".weight", uniform_init(rng, in, out, in));
  p.bias = store.add(group, prefix + ".bias", uniform_init(rng, 1, out, in));
  return p;
}

LayerNormParams make_layer_norm(ParamStore& store, const std::string& group, const std::string& prefix,
                                Eigen::Index width) {
  LayerNormParams p;
  p.gamma = store.add(group, prefix + ".gamma", Matrix::Ones(1, width));
  p.beta = store.add(group, prefix + ".beta", Matrix::Zero(1, width));
  return p;
}

Var linear(const ParamStore& store, const LinearParams& p, const Var& x) {
  const Var& w = store[p.weight];
  if (x.cols() != w.rows()) {
    throw std::invalid_argument("linear: input width " + std::to_string(x.cols()) + " != " +
                                std::to_string(w.rows()));
  }
  return add_row(matmul(x, w), store[p.bias]);
}

Var layer_norm(const ParamStore& store, const LayerNormParams& p, const Var& x) {
  return layer_norm_rows(x, store[p.gamma], store[p.beta]);
}

AttentionParams make_attention(ParamStore& store, CounterRng& rng, const std::string& group,
                               const std::string& prefix, Eigen::Index width, int heads) {
  if (heads < 1 || width % heads != 0) throw std::invalid_argument("attention: heads must divide width");
  AttentionParams p;
  p.query = make_linear(store, rng, group, prefix + ".query", width, width);
  p.key = make_linear(store, rng, group, prefix + ".key", width, width);
  p.value = make_linear(store, rng, group, prefix + ".value", width, width);
  p.output = make_linear(store, rng, group, prefix + ".output", width, width);
  p.heads = heads;
  return p;
}

Var self_attention(const ParamStore& store, const AttentionParams& p, const Var& x, std::vector<Matrix>* weights) {
  const Var q = linear(store, p.query, x);
  const Var k = linear(store, p.key, x);
  const Var v = linear(store, p.value, x);
  const Eigen::Index width = q.cols();
  const Eigen::Index head_dim = width / p.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  if (weights) weights->clear();

  Var mixed;
  if (p.heads == 1) {
    const Var attn = softmax_rows(scale(matmul_nt(q, k), inv_sqrt));
    if (weights) weights->push_back(attn.value());
    mixed = matmul(attn, v);
  } else {
    Var concat;
    for (int h = 0; h < p.heads; ++h) {
      const Var qh = slice_cols(q, h * head_dim, head_dim);
      const Var kh = slice_cols(k, h * head_dim, head_dim);
      const Var vh = slice_cols(v, h * head_dim, head_dim);
      const Var attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
      if (weights) weights->push_back(attn.value());
      const Var out = matmul(attn, vh);
      concat = concat.defined() ? concat_cols(concat, out) : out;
    }
    mixed = concat;
  }
  return linear(store, p.output, mixed);
}

TransformerLayerParams make_transformer_layer(ParamStore& store, CounterRng& rng, const std::string& group,
                                              const std::string& prefix, Eigen::Index width, int heads,
                                              Eigen::Index ff_width) {
  TransformerLayerParams p;
  p.norm1 = make_layer_norm(store, group, prefix + ".norm1", width);
  p.attention = make_attention(store, rng, group, prefix + ".attn", width, heads);
  p.norm2 = make_layer_norm(store, group, prefix + ".norm2", width);
  p.ff_in = make_linear(store, rng, group, prefix + ".ff_in", width, ff_width);
  p.ff_out = make_linear(store, rng, group, prefix + ".ff_out", ff_width, width);
  return p;
}

Var transformer_layer(const ParamStore& store, const TransformerLayerParams& p, const Var& x,
                      std::vector<Matrix>* weights) {
  const Var y = add(x, self_attention(store, p.attention, layer_norm(store, p.norm1, x), weights));
  const Var hidden = gelu(linear(store, p.ff_in, layer_norm(store, p.norm2, y)));
  return add(y, linear(store, p.ff_out, hidden));
}

Matrix sinusoidal_positions(Eigen::Index rows, Eigen::Index width) {
  Matrix pe(rows, width);
  for (Eigen::Index n = 0; n < rows; ++n) {
    for (Eigen::Index j = 0; j < width; ++j) {
      const Eigen::Index pair = j / 2;
      const double freq = std::pow(10000.0, static_cast<double>(2 * pair) / static_cast<double>(width));
      const double angle = static_cast<double>(n) / freq;
      pe(n, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

}  // namespace proclip
