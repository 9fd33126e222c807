#include "qreform/encoder.hpp"

#include <cmath>

#include "qreform/error.hpp"

namespace qreform {
namespace {

Tensor uniform_tensor(Shape shape, double k, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-k, k);
  return t;
}

}  // namespace

LstmCell LstmCell::create(const std::string& name, std::size_t input, std::size_t hidden, Rng& rng) {
  if (input == 0 || hidden == 0) throw UsageError("LSTM sizes must be positive");
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
  LstmCell cell;
  cell.input_size = input;
  cell.hidden_size = hidden;
  cell.W = Parameter(name + ".W", uniform_tensor({4 * hidden, input}, k, rng));
  cell.U = Parameter(name + ".U", uniform_tensor({4 * hidden, hidden}, k, rng));
  Tensor bias({4 * hidden});
  for (std::size_t i = hidden; i < 2 * hidden; ++i) bias[i] = 1.0;
  cell.b = Parameter(name + ".b", std::move(bias));
  return cell;
}

LstmVars bind(Graph& g, LstmCell& cell) {
  return LstmVars{g.param(cell.W), g.param(cell.U), g.param(cell.b), cell.hidden_size};
}

LstmState zero_state(Graph& g, std::size_t hidden) {
  return LstmState{g.constant(Tensor({hidden})), g.constant(Tensor({hidden}))};
}

LstmState lstm_cell_step(const LstmVars& cell, Var x, const LstmState& prev) {
  const std::size_t h = cell.hidden;
  if (prev.h.size() != h || prev.c.size() != h) throw UsageError("lstm_cell_step: state size mismatch");
  if (x.value().size() != cell.W.value().cols()) throw UsageError("lstm_cell_step: input size mismatch");
  Var z = ad::add(ad::affine(x, cell.W, cell.b), ad::matvec(cell.U, prev.h));
  Var in_gate = ad::sigmoid(ad::slice(z, 0, h));
  Var forget = ad::sigmoid(ad::slice(z, h, h));
  Var candidate = ad::tanh(ad::slice(z, 2 * h, h));
  Var out_gate = ad::sigmoid(ad::slice(z, 3 * h, h));
  Var c = ad::add(ad::mul(forget, prev.c), ad::mul(in_gate, candidate));
  Var hidden = ad::mul(out_gate, ad::tanh(c));
  return LstmState{hidden, c};
}

// ---- query encoder --------------------------------------------------------

QueryEncoder QueryEncoder::create(std::size_t embedding_dim, std::size_t hidden_per_direction,
                                  std::size_t attention_dim, Rng& rng) {
  QueryEncoder enc;
  enc.forward = LstmCell::create("query_encoder.forward", embedding_dim, hidden_per_direction, rng);
  enc.backward = LstmCell::create("query_encoder.backward", embedding_dim, hidden_per_direction, rng);
  const std::size_t width = 2 * hidden_per_direction;
  const double k = 1.0 / std::sqrt(static_cast<double>(width));
  enc.attn_proj = Parameter("query_encoder.attn_proj", uniform_tensor({attention_dim, width}, k, rng));
  enc.attn_bias = Parameter("query_encoder.attn_bias", Tensor({attention_dim}));
  enc.attn_context = Parameter("query_encoder.attn_context",
                               uniform_tensor({attention_dim}, 1.0 / std::sqrt(static_cast<double>(attention_dim)), rng));
  return enc;
}

std::vector<Parameter*> QueryEncoder::params() {
  std::vector<Parameter*> out = forward.params();
  for (Parameter* p : backward.params()) out.push_back(p);
  out.push_back(&attn_proj);
  out.push_back(&attn_bias);
  out.push_back(&attn_context);
  return out;
}

QueryEncoderVars bind(Graph& g, QueryEncoder& enc) {
  return QueryEncoderVars{bind(g, enc.forward),       bind(g, enc.backward),         g.param(enc.attn_proj),
                          g.param(enc.attn_bias),     g.param(enc.attn_context),     enc.output_size()};
}

QueryEncoding encode_query(Graph& g, const QueryEncoderVars& enc, Parameter& embeddings,
                           std::span<const TokenId> tokens) {
  if (tokens.size() != kQueryLen) {
    throw UsageError("encode_query: expected " + std::to_string(kQueryLen) + " token ids, got " +
                     std::to_string(tokens.size()));
  }
  const std::size_t n = tokens.size();
  std::vector<Var> inputs;
  inputs.reserve(n);
  for (TokenId t : tokens) inputs.push_back(ad::embedding_lookup(g, embeddings, t));

  std::vector<Var> fwd(n), bwd(n);
  LstmState state = zero_state(g, enc.forward.hidden);
  for (std::size_t t = 0; t < n; ++t) {
    state = lstm_cell_step(enc.forward, inputs[t], state);
    fwd[t] = state.h;
  }
  state = zero_state(g, enc.backward.hidden);
  for (std::size_t t = n; t-- > 0;) {
    state = lstm_cell_step(enc.backward, inputs[t], state);
    bwd[t] = state.h;
  }

  QueryEncoding out;
  out.attention.assign(n, 0.0);
  std::vector<Var> kept;
  std::vector<Var> scores;
  std::vector<std::size_t> positions;
  for (std::size_t t = 0; t < n; ++t) {
    out.states.push_back(ad::concat(fwd[t], bwd[t]));
    if (tokens[t] == kPad) continue;
    Var key = ad::tanh(ad::affine(out.states[t], enc.attn_proj, enc.attn_bias));
    scores.push_back(ad::dot(enc.attn_context, key));
    kept.push_back(out.states[t]);
    positions.push_back(t);
  }
  if (kept.empty()) {
    out.vector = g.constant(Tensor({enc.output_size}));
    return out;
  }
  Var alpha = ad::softmax(ad::concat(scores));
  for (std::size_t k = 0; k < positions.size(); ++k) out.attention[positions[k]] = alpha.value()[k];
  out.vector = ad::matvec_t(ad::stack(kept), alpha);
  return out;
}

// ---- session encoder ------------------------------------------------------

SessionEncoder SessionEncoder::create(std::size_t query_dim, std::size_t hidden, Rng& rng) {
  return SessionEncoder{LstmCell::create("session_encoder", query_dim, hidden, rng)};
}

SessionEncoderVars bind(Graph& g, SessionEncoder& enc) { return SessionEncoderVars{bind(g, enc.cell)}; }

SessionState start_session(Graph& g, const SessionEncoderVars& enc, std::string session_id) {
  return SessionState{std::move(session_id), zero_state(g, enc.cell.hidden), {}};
}

Var encode_session_step(const SessionEncoderVars& enc, SessionState& state, Var query_vector,
                        std::string_view session_id) {
  if (session_id != state.session_id) {
    throw UsageError("encode_session_step: state belongs to session '" + state.session_id + "', not '" +
                     std::string(session_id) + "'");
  }
  state.lstm = lstm_cell_step(enc.cell, query_vector, state.lstm);
  state.hidden.push_back(state.lstm.h);
  if (state.hidden.size() == 1) return state.hidden.front();
  return ad::maxpool_over_steps(ad::stack(state.hidden));
}

}  // namespace qreform
