#pragma once

#include <span>
#include <vector>

#include "qreform/corpus.hpp"
#include "qreform/encoder.hpp"

namespace qreform {

struct Decoder {
  Parameter init_W;  // dh x session
  Parameter init_b;
  LstmCell cell;     // embedding -> dh
  Parameter phi_W;   // dh x dh
  Parameter phi_b;
  Parameter out_W;   // |V| x dh
  Parameter out_b;

  static Decoder create(std::size_t embedding_dim, std::size_t session_dim, std::size_t hidden, std::size_t vocab,
                        Rng& rng);
  std::size_t vocab_size() const { return out_W.value.rows(); }
  std::vector<Parameter*> params();
};

struct DecoderVars {
  Var init_W, init_b;
  LstmVars cell;
  Var phi_W, phi_b, out_W, out_b;
  std::size_t vocab = 0;
};

DecoderVars bind(Graph& g, Decoder& dec);

/// h_0 = tanh(W V_S + b), c_0 = 0.
LstmState init_state(const DecoderVars& dec, Var session_vector);

struct DecodeStep {
  Var logits;
  LstmState state;
};

/// Embeds `prev`, advances the LSTM and produces logits of
/// W_out tanh(W_phi h + b_phi) + b_out. Softmax of the logits is the word
/// distribution.
DecodeStep decode_step(const DecoderVars& dec, Parameter& embeddings, TokenId prev, const LstmState& state);

enum class EntropyMode {
  /// loss -= lambda * H: flattens the distribution.
  Reward,
  /// loss += lambda * H: the regularizer sign exactly as printed.
  Literal,
};

struct ReformLossOptions {
  double lambda = 0.1;
  EntropyMode entropy = EntropyMode::Reward;
};

/// Teacher-forced negative log-likelihood of `target` plus the entropy
/// regularizer. Steps after the first PAD are masked; the first PAD is itself
/// predicted. Throws UsageError unless target has kTargetLen ids.
Var reform_loss(const DecoderVars& dec, Parameter& embeddings, Var session_vector, std::span<const TokenId> target,
                const ReformLossOptions& options);

/// Sum over t of log P(w_t | w_<t, V_S) with BOS as the first input.
Var sequence_logprob(const DecoderVars& dec, Parameter& embeddings, Var session_vector,
                     std::span<const TokenId> tokens);

}  // namespace qreform
