#include "qreform/decoder.hpp"

#include <cmath>

#include "qreform/error.hpp"

namespace qreform {
namespace {

Tensor uniform_tensor(Shape shape, double k, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-k, k);
  return t;
}

void check_id(TokenId id, std::size_t vocab) {
  if (id >= vocab) throw UsageError("decoder: token id " + std::to_string(id) + " outside vocabulary");
}

}  // namespace

Decoder Decoder::create(std::size_t embedding_dim, std::size_t session_dim, std::size_t hidden, std::size_t vocab,
                        Rng& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
  Decoder d;
  d.init_W = Parameter("decoder.init_W", uniform_tensor({hidden, session_dim}, k, rng));
  d.init_b = Parameter("decoder.init_b", Tensor({hidden}));
  d.cell = LstmCell::create("decoder.cell", embedding_dim, hidden, rng);
  d.phi_W = Parameter("decoder.phi_W", uniform_tensor({hidden, hidden}, k, rng));
  d.phi_b = Parameter("decoder.phi_b", Tensor({hidden}));
  d.out_W = Parameter("decoder.out_W", uniform_tensor({vocab, hidden}, k, rng));
  d.out_b = Parameter("decoder.out_b", Tensor({vocab}));
  return d;
}

std::vector<Parameter*> Decoder::params() {
  std::vector<Parameter*> out{&init_W, &init_b};
  for (Parameter* p : cell.params()) out.push_back(p);
  for (Parameter* p : {&phi_W, &phi_b, &out_W, &out_b}) out.push_back(p);
  return out;
}

DecoderVars bind(Graph& g, Decoder& dec) {
  return DecoderVars{g.param(dec.init_W), g.param(dec.init_b), bind(g, dec.cell),  g.param(dec.phi_W),
                     g.param(dec.phi_b),  g.param(dec.out_W),  g.param(dec.out_b), dec.vocab_size()};
}

LstmState init_state(const DecoderVars& dec, Var session_vector) {
  if (session_vector.value().size() != dec.init_W.value().cols()) {
    throw UsageError("decoder init_state: session vector size mismatch");
  }
  Var h = ad::tanh(ad::affine(session_vector, dec.init_W, dec.init_b));
  Var c = session_vector.graph->constant(Tensor({dec.cell.hidden}));
  return LstmState{h, c};
}

DecodeStep decode_step(const DecoderVars& dec, Parameter& embeddings, TokenId prev, const LstmState& state) {
  check_id(prev, dec.vocab);
  Graph& g = *state.h.graph;
  Var x = ad::embedding_lookup(g, embeddings, prev);
  LstmState next = lstm_cell_step(dec.cell, x, state);
  Var features = ad::tanh(ad::affine(next.h, dec.phi_W, dec.phi_b));
  Var logits = ad::affine(features, dec.out_W, dec.out_b);
  return DecodeStep{logits, next};
}

Var reform_loss(const DecoderVars& dec, Parameter& embeddings, Var session_vector, std::span<const TokenId> target,
                const ReformLossOptions& options) {
  if (target.size() != kTargetLen) {
    throw UsageError("reform_loss: target must have " + std::to_string(kTargetLen) + " ids, got " +
                     std::to_string(target.size()));
  }
  LstmState state = init_state(dec, session_vector);
  std::vector<Var> terms;
  TokenId prev = kBos;
  for (std::size_t t = 0; t < target.size(); ++t) {
    check_id(target[t], dec.vocab);
    DecodeStep step = decode_step(dec, embeddings, prev, state);
    state = step.state;
    Var logp = ad::log_softmax(step.logits);
    Var nll = ad::scale(ad::pick(logp, target[t]), -1.0);
    terms.push_back(nll);
    if (options.lambda != 0.0) {
      // H = -sum p log p
      Var p = ad::softmax(step.logits);
      Var entropy = ad::scale(ad::sum(ad::mul(p, logp)), -1.0);
      const double sign = options.entropy == EntropyMode::Reward ? -1.0 : 1.0;
      terms.push_back(ad::scale(entropy, sign * options.lambda));
    }
    if (target[t] == kPad) break;
    prev = target[t];
  }
  return ad::add_n(terms);
}

Var sequence_logprob(const DecoderVars& dec, Parameter& embeddings, Var session_vector,
                     std::span<const TokenId> tokens) {
  if (tokens.empty()) throw UsageError("sequence_logprob: empty sequence");
  LstmState state = init_state(dec, session_vector);
  std::vector<Var> terms;
  TokenId prev = kBos;
  for (TokenId w : tokens) {
    check_id(w, dec.vocab);
    DecodeStep step = decode_step(dec, embeddings, prev, state);
    state = step.state;
    terms.push_back(ad::pick(ad::log_softmax(step.logits), w));
    prev = w;
  }
  return ad::add_n(terms);
}

}  // namespace qreform
