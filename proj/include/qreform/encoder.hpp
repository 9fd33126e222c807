#pragma once

#include <span>
#include <string>
#include <vector>

#include "qreform/corpus.hpp"
#include "qreform/graph.hpp"
#include "qreform/rng.hpp"

namespace qreform {

/// LSTM cell with fused gate weights. Gate blocks are laid out
/// [input; forget; cell; output], each `hidden` rows.
struct LstmCell {
  Parameter W;  // 4h x in
  Parameter U;  // 4h x h
  Parameter b;  // 4h, forget block initialized to 1
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;

  /// Weights ~ U(-k, k) with k = 1/sqrt(hidden).
  static LstmCell create(const std::string& name, std::size_t input, std::size_t hidden, Rng& rng);
  std::vector<Parameter*> params() { return {&W, &U, &b}; }
};

struct LstmVars {
  Var W, U, b;
  std::size_t hidden = 0;
};

struct LstmState {
  Var h;
  Var c;
};

LstmVars bind(Graph& g, LstmCell& cell);
LstmState zero_state(Graph& g, std::size_t hidden);

/// Standard gated update:
///   i = s(.), f = s(.), g = tanh(.), o = s(.) over W x + U h + b
///   c' = f * c + i * g,  h' = o * tanh(c')
LstmState lstm_cell_step(const LstmVars& cell, Var x, const LstmState& prev);

// ---- query encoder --------------------------------------------------------

struct QueryEncoder {
  LstmCell forward;
  LstmCell backward;
  Parameter attn_proj;     // a x 2h
  Parameter attn_bias;     // a
  Parameter attn_context;  // a

  static QueryEncoder create(std::size_t embedding_dim, std::size_t hidden_per_direction, std::size_t attention_dim,
                             Rng& rng);
  std::size_t output_size() const { return 2 * forward.hidden_size; }
  std::vector<Parameter*> params();
};

struct QueryEncoderVars {
  LstmVars forward, backward;
  Var attn_proj, attn_bias, attn_context;
  std::size_t output_size = 0;
};

QueryEncoderVars bind(Graph& g, QueryEncoder& enc);

struct QueryEncoding {
  std::vector<Var> states;         // H_t = [fwd_t ; bwd_t], one per token position
  std::vector<double> attention;   // weight per position, 0 on PAD
  Var vector;                      // attention-pooled V_q
};

/// BiLSTM over all kQueryLen positions (PAD included), additive attention
/// restricted to non-PAD positions. An all-PAD query encodes to zeros.
QueryEncoding encode_query(Graph& g, const QueryEncoderVars& enc, Parameter& embeddings,
                           std::span<const TokenId> tokens);

// ---- session encoder ------------------------------------------------------

struct SessionEncoder {
  LstmCell cell;

  static SessionEncoder create(std::size_t query_dim, std::size_t hidden, Rng& rng);
  std::size_t output_size() const { return cell.hidden_size; }
  std::vector<Parameter*> params() { return cell.params(); }
};

struct SessionEncoderVars {
  LstmVars cell;
};

SessionEncoderVars bind(Graph& g, SessionEncoder& enc);

/// Running state of one session. Owned by a single in-flight session.
struct SessionState {
  std::string session_id;
  LstmState lstm;
  std::vector<Var> hidden;  // h_1..h_i
};

SessionState start_session(Graph& g, const SessionEncoderVars& enc, std::string session_id);

/// Feeds V_q to the session LSTM and returns V_S, the dimension-wise max over
/// every hidden state emitted so far. Throws UsageError when `session_id`
/// does not match the state.
Var encode_session_step(const SessionEncoderVars& enc, SessionState& state, Var query_vector,
                        std::string_view session_id);

}  // namespace qreform
