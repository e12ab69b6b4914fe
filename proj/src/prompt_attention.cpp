#include "proclip/prompt_attention.hpp"

#include <cmath>
#include <stdexcept>

namespace proclip {

GateParams make_gate(ParamStore& store, CounterRng& rng, Eigen::Index dim) {
  GateParams p;
  p.w1 = store.add("gate", "gate.w1", uniform_init(rng, dim, 2 * dim, 2 * dim));
  p.b1 = store.add("gate", "gate.b1", uniform_init(rng, 1, dim, 2 * dim));
  p.w2 = store.add("gate", "gate.w2", uniform_init(rng, 1, dim, dim));
  p.b2 = store.add("gate", "gate.b2", uniform_init(rng, 1, 1, dim));
  return p;
}

WordAttention word_cross_attention(const Var& words, const Var& frames) {
  if (words.cols() != frames.cols()) throw std::invalid_argument("word_cross_attention: dimension mismatch");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(frames.cols()));
  WordAttention out;
  out.attention = softmax_rows(scale(matmul_nt(words, frames), inv_sqrt));
  out.scores = transpose(mean_rows(out.attention));
  out.weighted = scale_rows(frames, out.scores);
  return out;
}

SentenceAttention sentence_cross_attention(const Var& sentence, const Var& frames) {
  if (sentence.rows() != 1 || sentence.cols() != frames.cols()) {
    throw std::invalid_argument("sentence_cross_attention: dimension mismatch");
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(frames.cols()));
  SentenceAttention out;
  out.scores = transpose(softmax_rows(scale(matmul_nt(sentence, frames), inv_sqrt)));
  out.weighted = scale_rows(frames, out.scores);
  return out;
}

FusionOutput gated_fusion(const ParamStore& store, const GateParams& gate, const Var& word_out,
                          const Var& sentence_out) {
  if (word_out.rows() != sentence_out.rows() || word_out.cols() != sentence_out.cols()) {
    throw std::invalid_argument("gated_fusion: W_o and S_o shapes differ");
  }
  if (store[gate.w1].cols() != 2 * word_out.cols()) throw std::invalid_argument("gated_fusion: gate width mismatch");
  const Var x = concat_cols(word_out, sentence_out);
  const Var hidden = relu(add_row(matmul_nt(x, store[gate.w1]), store[gate.b1]));
  const Var logit = add_row(matmul_nt(hidden, store[gate.w2]), store[gate.b2]);
  FusionOutput out;
  out.g = sigmoid(logit);
  // y = S_o + g (W_o - S_o)
  out.y = add(sentence_out, scale_rows(sub(word_out, sentence_out), out.g));
  out.word_out = word_out;
  out.sentence_out = sentence_out;
  return out;
}

FusionOutput prompt_fusion(const ParamStore& store, const GateParams& gate, const Var& words, const Var& sentence,
                           const Var& frames) {
  const WordAttention word = word_cross_attention(words, frames);
  const SentenceAttention sent = sentence_cross_attention(sentence, frames);
  FusionOutput out = gated_fusion(store, gate, word.weighted, sent.weighted);
  out.word_scores = word.scores;
  out.sentence_scores = sent.scores;
  return out;
}

}  // namespace proclip
