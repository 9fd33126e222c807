#pragma once

#include <vector>

#include "qreform/decoder.hpp"

namespace qreform {

struct Hypothesis {
  std::vector<TokenId> tokens;  // includes the terminating PAD when finished early
  double logprob = 0.0;
  bool finished = false;
};

struct BeamConfig {
  std::size_t width = 3;
  std::size_t max_len = kTargetLen;
  /// Rank by logprob / length instead of raw logprob.
  bool length_normalize = false;
};

/// Argmax decoding (lowest id on ties) until the first PAD or max_len tokens.
Hypothesis greedy_decode(const DecoderVars& dec, Parameter& embeddings, Var session_vector, std::size_t max_len);

/// Keeps the `width` best cumulative-logprob hypotheses per step; a
/// hypothesis finishes when it emits PAD or reaches max_len. Finished
/// hypotheses compete in the final selection together with the greedy
/// completion. Returns up to `width` distinct sequences sorted by score
/// descending; ties go to the lexicographically smaller token sequence.
std::vector<Hypothesis> beam_search(const DecoderVars& dec, Parameter& embeddings, Var session_vector,
                                    const BeamConfig& config);

}  // namespace qreform
