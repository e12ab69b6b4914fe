#pragma once

#include "proclip/params.hpp"

namespace proclip {

// g = sigmoid(ReLU(x W1^T + b1) W2^T + b2) with x = [W_o ; S_o] per frame.
struct GateParams {
  ParamId w1;  // D x 2D
  ParamId b1;  // 1 x D
  ParamId w2;  // 1 x D
  ParamId b2;  // 1 x 1
};

GateParams make_gate(ParamStore& store, CounterRng& rng, Eigen::Index dim);

struct WordAttention {
  Var attention;  // W x N, softmax over frames per word
  Var scores;     // N x 1, mean over words (not renormalized)
  Var weighted;   // N x D, frame j scaled by scores(j)
};

struct SentenceAttention {
  Var scores;    // N x 1, softmax over frames
  Var weighted;  // N x D
};

WordAttention word_cross_attention(const Var& words, const Var& frames);
SentenceAttention sentence_cross_attention(const Var& sentence, const Var& frames);

struct FusionOutput {
  Var y;                // N x D
  Var g;                // N x 1, strictly inside (0, 1)
  Var word_scores;      // N x 1
  Var sentence_scores;  // N x 1
  Var word_out;         // W_o
  Var sentence_out;     // S_o
};

// Fuses precomputed attention outputs; the score fields are left undefined.
FusionOutput gated_fusion(const ParamStore& store, const GateParams& gate, const Var& word_out,
                          const Var& sentence_out);

// Word + sentence attention over `frames`, then gated fusion.
FusionOutput prompt_fusion(const ParamStore& store, const GateParams& gate, const Var& words, const Var& sentence,
                           const Var& frames);

}  // namespace proclip
